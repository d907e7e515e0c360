#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "maskmatch/numerics/rng.hpp"
#include "maskmatch/numerics/tape.hpp"
#include "maskmatch/numerics/tensor.hpp"

// Differentiable primitives over Var. Each op computes its value eagerly and
// records a vector-Jacobian product closure on the tape of its operands.
namespace maskmatch {

namespace detail {

template <typename T>
Tape<T>& tape_of(std::initializer_list<Var<T>> vars) {
    Tape<T>* t = vars.begin()->tape;
    for (const auto& v : vars) {
        if (v.tape != t) fail(ErrorKind::kTapeState, "operands recorded on different tapes");
    }
    return *t;
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& tape = detail::tape_of({a, b});
    return tape.record(ops::matmul(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        const Tensor<T>& av = t.value(a.id);
        const Tensor<T>& bv = t.value(b.id);
        const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
        if (Tensor<T>* ga = t.grad_target(a.id)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T acc{0};
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                    (*ga)[i * k + p] += acc;
                }
        }
        if (Tensor<T>* gb = t.grad_target(b.id)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T aip = av[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += aip * g[i * n + j];
                }
        }
    });
}

// a[m x k] times transpose(b[n x k]).
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    Tape<T>& tape = detail::tape_of({a, b});
    return tape.record(ops::matmul_nt(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        const Tensor<T>& av = t.value(a.id);
        const Tensor<T>& bv = t.value(b.id);
        const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
        Tensor<T>* ga = t.grad_target(a.id);
        Tensor<T>* gb = t.grad_target(b.id);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const T gij = g[i * n + j];
                if (gij == T{0}) continue;
                if (ga)
                    for (std::size_t p = 0; p < k; ++p) (*ga)[i * k + p] += gij * bv[j * k + p];
                if (gb)
                    for (std::size_t p = 0; p < k; ++p) (*gb)[j * k + p] += gij * av[i * k + p];
            }
    });
}

// x[m x k] * w[k x n] + bias[n]
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
    Tape<T>& tape = detail::tape_of({x, w, bias});
    Tensor<T> out = ops::matmul(x.value(), w.value());
    if (bias.value().size() != out.cols()) {
        fail(ErrorKind::kDimension, "linear: bias " + shape_string(bias.shape()) +
                                        " does not match output " + shape_string(out.shape()));
    }
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias.value()[j];
    return tape.record(std::move(out), {x, w, bias}, [x, w, bias](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        const Tensor<T>& xv = t.value(x.id);
        const Tensor<T>& wv = t.value(w.id);
        const std::size_t m = xv.rows(), k = xv.cols(), n = wv.cols();
        if (Tensor<T>* gx = t.grad_target(x.id)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T acc{0};
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * wv[p * n + j];
                    (*gx)[i * k + p] += acc;
                }
        }
        if (Tensor<T>* gw = t.grad_target(w.id)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T xip = xv[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) (*gw)[p * n + j] += xip * g[i * n + j];
                }
        }
        if (Tensor<T>* gbias = t.grad_target(bias.id)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*gbias)[j] += g[i * n + j];
        }
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& tape = detail::tape_of({a, b});
    Tensor<T> out = a.value();
    out += b.value();
    return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        if (Tensor<T>* ga = t.grad_target(a.id)) *ga += g;
        if (Tensor<T>* gb = t.grad_target(b.id)) *gb += g;
    });
}

// Elementwise sum of equally shaped values.
template <typename T>
Var<T> sum_of(const std::vector<Var<T>>& terms) {
    if (terms.empty()) fail(ErrorKind::kContract, "sum_of needs at least one term");
    Tape<T>& tape = *terms.front().tape;
    Tensor<T> out = terms.front().value();
    for (std::size_t i = 1; i < terms.size(); ++i) out += terms[i].value();
    return tape.record(std::move(out), terms, [terms](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        for (const auto& v : terms)
            if (Tensor<T>* gv = t.grad_target(v.id)) *gv += g;
    });
}

// Adds a row vector to every row of x.
template <typename T>
Var<T> add_row(Var<T> x, Var<T> row) {
    Tape<T>& tape = detail::tape_of({x, row});
    Tensor<T> out = x.value();
    const std::size_t n = out.cols();
    if (row.value().size() != n) {
        fail(ErrorKind::kDimension, "add_row: " + shape_string(row.shape()) + " vs " +
                                        shape_string(out.shape()));
    }
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) += row.value()[j];
    return tape.record(std::move(out), {x, row}, [x, row](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        if (Tensor<T>* gx = t.grad_target(x.id)) *gx += g;
        if (Tensor<T>* gr = t.grad_target(row.id)) {
            const std::size_t n = g.cols();
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < n; ++j) (*gr)[j] += g[i * n + j];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>& tape = detail::tape_of({a, b});
    Tensor<T>::require_same_shape(a.value(), b.value(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        const Tensor<T>& av = t.value(a.id);
        const Tensor<T>& bv = t.value(b.id);
        if (Tensor<T>* ga = t.grad_target(a.id))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
        if (Tensor<T>* gb = t.grad_target(b.id))
            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (auto& v : out.data()) v *= factor;
    return a.tape->record(std::move(out), {a}, [a, factor](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        if (Tensor<T>* ga = t.grad_target(a.id))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += factor * g[i];
    });
}

// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(Var<T> a) {
    Tensor<T> out = a.value();
    const T inv_sqrt2 = T{1} / std::numbers::sqrt2_v<T>;
    for (auto& v : out.data()) v = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
    return a.tape->record(std::move(out), {a}, [a, inv_sqrt2](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        const Tensor<T>& x = t.value(a.id);
        const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
        if (Tensor<T>* ga = t.grad_target(a.id))
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T cdf = T{0.5} * (T{1} + std::erf(x[i] * inv_sqrt2));
                const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * x[i] * x[i]);
                (*ga)[i] += g[i] * (cdf + x[i] * pdf);
            }
    });
}

// Row-wise layer normalization with gain and bias vectors.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T{1e-5}) {
    Tape<T>& tape = detail::tape_of({x, gain, bias});
    const Tensor<T>& xv = x.value();
    const std::size_t m = xv.rows(), n = xv.cols();
    if (gain.value().size() != n || bias.value().size() != n) {
        fail(ErrorKind::kDimension, "layer_norm: parameter width does not match " +
                                        shape_string(xv.shape()));
    }
    Tensor<T> out(xv.shape());
    std::vector<T> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        auto r = xv.row(i);
        T mean{0};
        for (T v : r) mean += v;
        mean /= static_cast<T>(n);
        T var{0};
        for (T v : r) var += (v - mean) * (v - mean);
        var /= static_cast<T>(n);
        inv_std[i] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j)
            out(i, j) = (r[j] - mean) * inv_std[i] * gain.value()[j] + bias.value()[j];
    }
    return tape.record(std::move(out), {x, gain, bias},
                       [x, gain, bias, inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        const Tensor<T>& xv = t.value(x.id);
        const Tensor<T>& gv = t.value(gain.id);
        const std::size_t m = xv.rows(), n = xv.cols();
        Tensor<T>* gx = t.grad_target(x.id);
        Tensor<T>* gg = t.grad_target(gain.id);
        Tensor<T>* gb = t.grad_target(bias.id);
        std::vector<T> xhat(n), dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
            auto r = xv.row(i);
            T mean{0};
            for (T v : r) mean += v;
            mean /= static_cast<T>(n);
            T mean_d{0}, mean_dx{0};
            for (std::size_t j = 0; j < n; ++j) {
                const T gij = g[i * n + j];
                xhat[j] = (r[j] - mean) * inv_std[i];
                dxhat[j] = gij * gv[j];
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * xhat[j];
                if (gg) (*gg)[j] += gij * xhat[j];
                if (gb) (*gb)[j] += gij;
            }
            if (!gx) continue;
            mean_d /= static_cast<T>(n);
            mean_dx /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j)
                (*gx)[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    });
}

// Row-wise softmax.
template <typename T>
Var<T> softmax(Var<T> logits) {
    return logits.tape->record(ops::softmax(logits.value()), {logits}, [logits](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        const Tensor<T>& p = t.value(self);
        Tensor<T>* gl = t.grad_target(logits.id);
        if (!gl) return;
        const std::size_t n = p.cols();
        for (std::size_t i = 0; i < p.rows(); ++i) {
            T dot{0};
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * p[i * n + j];
            for (std::size_t j = 0; j < n; ++j) (*gl)[i * n + j] += p[i * n + j] * (g[i * n + j] - dot);
        }
    });
}

// -log p[gold] over a probability vector, with the probability floor.
template <typename T>
Var<T> cross_entropy(Var<T> probabilities, std::size_t gold) {
    const T loss = ops::cross_entropy(probabilities.value().data(), gold);
    return probabilities.tape->record(Tensor<T>({1}, loss), {probabilities},
                                      [probabilities, gold](Tape<T>& t, std::size_t self) {
        const T p = t.value(probabilities.id)[gold];
        Tensor<T>* gp = t.grad_target(probabilities.id);
        if (gp && p > static_cast<T>(ops::kProbabilityFloor)) (*gp)[gold] -= t.grad_of(self)[0] / p;
    });
}

// Cross-entropy of softmax(logits) against a gold index, via log-sum-exp.
// The logit gradient is p - onehot(gold).
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::size_t gold) {
    const Tensor<T>& z = logits.value();
    if (z.rank() != 1 && z.rows() != 1) fail(ErrorKind::kDimension, "logits must be a vector");
    if (gold >= z.size()) {
        fail(ErrorKind::kIndex, "gold index " + std::to_string(gold) + " out of range for " +
                                    std::to_string(z.size()) + " classes");
    }
    if (!z.all_finite()) fail(ErrorKind::kNumericInput, "logits contain NaN or Inf");
    const T lse = ops::log_sum_exp<T>(z.data());
    const T loss = std::min(lse - z[gold], -std::log(static_cast<T>(ops::kProbabilityFloor)));
    return logits.tape->record(Tensor<T>({1}, loss), {logits}, [logits, gold](Tape<T>& t, std::size_t self) {
        Tensor<T>* gl = t.grad_target(logits.id);
        if (!gl) return;
        const T g = t.grad_of(self)[0];
        const Tensor<T> p = ops::softmax(t.value(logits.id));
        for (std::size_t j = 0; j < p.size(); ++j) (*gl)[j] += g * (p[j] - (j == gold ? T{1} : T{0}));
    });
}

// Gathers rows of table for the given ids.
template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
    const Tensor<T>& tv = table.value();
    const std::size_t d = tv.cols();
    Tensor<T> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
            fail(ErrorKind::kIndex, "embedding id " + std::to_string(ids[i]) + " outside table of " +
                                        std::to_string(tv.rows()) + " rows");
        }
        std::copy_n(tv.row(ids[i]).begin(), d, out.row(i).begin());
    }
    return table.tape->record(std::move(out), {table},
                              [table, idv = std::vector<int>(ids.begin(), ids.end())](Tape<T>& t, std::size_t self) {
        Tensor<T>* gt = t.grad_target(table.id);
        if (!gt) return;
        const Tensor<T>& g = t.grad_of(self);
        const std::size_t d = g.cols();
        for (std::size_t i = 0; i < idv.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) (*gt)(idv[i], j) += g[i * d + j];
    });
}

// Row i of x as a rank-1 vector.
template <typename T>
Var<T> row(Var<T> x, std::size_t i) {
    const Tensor<T>& xv = x.value();
    if (i >= xv.rows()) {
        fail(ErrorKind::kIndex, "row " + std::to_string(i) + " of " + shape_string(xv.shape()));
    }
    auto r = xv.row(i);
    Tensor<T> out({xv.cols()}, std::vector<T>(r.begin(), r.end()));
    return x.tape->record(std::move(out), {x}, [x, i](Tape<T>& t, std::size_t self) {
        Tensor<T>* gx = t.grad_target(x.id);
        if (!gx) return;
        const Tensor<T>& g = t.grad_of(self);
        for (std::size_t j = 0; j < g.size(); ++j) (*gx)(i, j) += g[j];
    });
}

// Stacks equally sized vectors into a matrix, one per row.
template <typename T>
Var<T> stack_rows(const std::vector<Var<T>>& rows) {
    if (rows.empty()) fail(ErrorKind::kContract, "stack_rows needs at least one row");
    const std::size_t d = rows.front().value().size();
    Tensor<T> out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Tensor<T>& r = rows[i].value();
        if (r.size() != d) fail(ErrorKind::kDimension, "stack_rows: ragged rows");
        std::copy(r.data().begin(), r.data().end(), out.row(i).begin());
    }
    return rows.front().tape->record(std::move(out), rows, [rows](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            Tensor<T>* gr = t.grad_target(rows[i].id);
            if (!gr) continue;
            auto gi = g.row(i);
            for (std::size_t j = 0; j < gi.size(); ++j) (*gr)[j] += gi[j];
        }
    });
}

// Columns [begin, end) of x.
template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
    const Tensor<T>& xv = x.value();
    if (begin >= end || end > xv.cols()) {
        fail(ErrorKind::kIndex, "column slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                    ") of " + shape_string(xv.shape()));
    }
    const std::size_t w = end - begin;
    Tensor<T> out({xv.rows(), w});
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < w; ++j) out(i, j) = xv.row(i)[begin + j];
    return x.tape->record(std::move(out), {x}, [x, begin, w](Tape<T>& t, std::size_t self) {
        Tensor<T>* gx = t.grad_target(x.id);
        if (!gx) return;
        const Tensor<T>& g = t.grad_of(self);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < w; ++j) (*gx)(i, begin + j) += g[i * w + j];
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) fail(ErrorKind::kContract, "concat_cols needs at least one part");
    const std::size_t m = parts.front().value().rows();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.value().rows() != m) fail(ErrorKind::kDimension, "concat_cols: row counts differ");
        total += p.value().cols();
    }
    Tensor<T> out({m, total});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const Tensor<T>& pv = p.value();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) out(i, offset + j) = pv(i, j);
        offset += pv.cols();
    }
    return parts.front().tape->record(std::move(out), parts, [parts](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad_of(self);
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t w = t.value(p.id).cols();
            if (Tensor<T>* gp = t.grad_target(p.id))
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < w; ++j) (*gp)(i, j) += g(i, offset + j);
            offset += w;
        }
    });
}

// Coordinate-wise maximum over rows [begin, end). Ties route the gradient to
// the first maximal row.
template <typename T>
Var<T> max_rows(Var<T> x, std::size_t begin, std::size_t end) {
    const Tensor<T>& xv = x.value();
    if (begin >= end || end > xv.rows()) {
        fail(ErrorKind::kContract, "pooling span [" + std::to_string(begin) + "," + std::to_string(end) +
                                       ") is empty or outside " + shape_string(xv.shape()));
    }
    const std::size_t d = xv.cols();
    Tensor<T> out({d});
    std::vector<std::size_t> arg(d, begin);
    for (std::size_t j = 0; j < d; ++j) {
        out[j] = xv(begin, j);
        for (std::size_t i = begin + 1; i < end; ++i)
            if (xv(i, j) > out[j]) {
                out[j] = xv(i, j);
                arg[j] = i;
            }
    }
    return x.tape->record(std::move(out), {x}, [x, arg = std::move(arg)](Tape<T>& t, std::size_t self) {
        Tensor<T>* gx = t.grad_target(x.id);
        if (!gx) return;
        const Tensor<T>& g = t.grad_of(self);
        for (std::size_t j = 0; j < g.size(); ++j) (*gx)(arg[j], j) += g[j];
    });
}

template <typename T>
Var<T> mean_rows(Var<T> x, std::size_t begin, std::size_t end) {
    const Tensor<T>& xv = x.value();
    if (begin >= end || end > xv.rows()) {
        fail(ErrorKind::kContract, "pooling span [" + std::to_string(begin) + "," + std::to_string(end) +
                                       ") is empty or outside " + shape_string(xv.shape()));
    }
    const std::size_t d = xv.cols();
    const T inv = T{1} / static_cast<T>(end - begin);
    Tensor<T> out({d});
    for (std::size_t i = begin; i < end; ++i)
        for (std::size_t j = 0; j < d; ++j) out[j] += xv(i, j);
    for (auto& v : out.data()) v *= inv;
    return x.tape->record(std::move(out), {x}, [x, begin, end, inv](Tape<T>& t, std::size_t self) {
        Tensor<T>* gx = t.grad_target(x.id);
        if (!gx) return;
        const Tensor<T>& g = t.grad_of(self);
        for (std::size_t i = begin; i < end; ++i)
            for (std::size_t j = 0; j < g.size(); ++j) (*gx)(i, j) += inv * g[j];
    });
}

template <typename T>
Var<T> sum(Var<T> x) {
    T acc{0};
    for (T v : x.value().data()) acc += v;
    return x.tape->record(Tensor<T>({1}, acc), {x}, [x](Tape<T>& t, std::size_t self) {
        Tensor<T>* gx = t.grad_target(x.id);
        if (!gx) return;
        const T g = t.grad_of(self)[0];
        for (auto& v : gx->data()) v += g;
    });
}

// Inverted dropout: zeroes each entry with probability rate and scales the
// survivors by 1 / (1 - rate).
template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::kContract, "dropout rate must be in [0, 1)");
    if (rate == 0.0) return x;
    Tensor<T> keep(x.shape());
    const T scale_up = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& v : keep.data()) v = rng.uniform() < rate ? T{0} : scale_up;
    return mul(x, x.tape->constant(std::move(keep)));
}

}  // namespace maskmatch
