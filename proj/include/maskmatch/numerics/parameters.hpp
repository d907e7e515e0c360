#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "maskmatch/numerics/tensor.hpp"

namespace maskmatch {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
};

// Stable handle into a ParameterSet.
struct ParamId {
    std::size_t index = 0;
    friend bool operator==(ParamId, ParamId) = default;
};

// Ordered, name-addressable collection of trainable tensors. Insertion order is
// the canonical order for optimizers and checkpoints.
template <typename T>
class ParameterSet {
   public:
    ParamId add(std::string name, Tensor<T> value) {
        if (by_name_.contains(name)) fail(ErrorKind::kContract, "duplicate parameter " + name);
        if (shape_size(value.shape()) == 0) {
            fail(ErrorKind::kDimension, "parameter " + name + " has a zero dimension");
        }
        ParamId id{params_.size()};
        by_name_.emplace(name, id.index);
        Tensor<T> grad(value.shape());
        params_.push_back({std::move(name), std::move(value), std::move(grad)});
        return id;
    }

    std::size_t size() const noexcept { return params_.size(); }

    Parameter<T>& operator[](ParamId id) { return params_.at(id.index); }
    const Parameter<T>& operator[](ParamId id) const { return params_.at(id.index); }
    Parameter<T>& at(std::size_t i) { return params_.at(i); }
    const Parameter<T>& at(std::size_t i) const { return params_.at(i); }

    bool contains(const std::string& name) const { return by_name_.contains(name); }

    ParamId id_of(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) fail(ErrorKind::kContract, "unknown parameter " + name);
        return ParamId{it->second};
    }

    Parameter<T>& operator[](const std::string& name) { return params_[id_of(name).index]; }
    const Parameter<T>& operator[](const std::string& name) const {
        return params_[id_of(name).index];
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad() {
        for (auto& p : params_) p.grad.fill(T{0});
    }

    // Copies values only; used for best-checkpoint snapshots.
    void assign_values(const ParameterSet& other) {
        if (other.size() != size()) fail(ErrorKind::kContract, "parameter set size mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor<T>::require_same_shape(params_[i].value, other.params_[i].value, "assign");
            params_[i].value = other.params_[i].value;
        }
    }

   private:
    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> by_name_;
};

}  // namespace maskmatch
