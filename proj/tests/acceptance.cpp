// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.

#include <chrono>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maskmatch/harness.hpp"
#include "maskmatch/metrics.hpp"
#include "maskmatch/prompts.hpp"
#include "support/exemplars.hpp"
#include "support/suites.hpp"

using namespace maskmatch;

namespace {

constexpr double kGradRelTol = 1e-4;
constexpr int kGradTrials = 20;
constexpr double kGradBudgetSeconds = 120.0;

constexpr int kOracleTriples = 200;
constexpr double kOracleTol = 1e-10;

constexpr double kLearnTarget = 0.95;
constexpr std::size_t kLearnMaxEpochs = 200;
constexpr double kLearnBudgetSeconds = 300.0;

constexpr double kParityFloor = 0.90;

constexpr double kLowResourceFraction = 0.1;
constexpr double kLowResourceInformativeness = 0.8;
constexpr double kLowResourceSlack = 0.01;

constexpr double kTemplateSpreadMax = 0.03;
constexpr double kAugmentDropMax = 0.005;

constexpr double kAccumTol = 1e-10;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// Small encoder shared by every training criterion.
TrainRunConfig desk_config() {
    TrainRunConfig c;
    c.encoder.layers = 1;
    c.encoder.hidden_dim = 32;
    c.encoder.heads = 2;
    c.encoder.ffn_dim = 64;
    c.max_input_length = 64;
    c.encoder.max_positions = 64;
    c.batch_size = 8;
    c.grad_accum = 4;
    c.peak_lr = 2e-3;
    c.warmup_ratio = 0.2;
    return c;
}

// The 8-class synthetic task: 313 per class gives 2000 training examples.
SyntheticSpec main_task() {
    SyntheticSpec s;
    s.name = "synthetic8";
    s.classes = 8;
    s.per_class = 313;
    s.informativeness = 0.9;
    s.noise = 0.1;
    s.seed = 1;
    return s;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::vector<double> dev_over_seeds(TrainRunConfig c, const Dataset& data, const std::vector<std::uint64_t>& seeds) {
    std::vector<double> out;
    for (auto s : seeds) {
        c.seed = s;
        out.push_back(train<double>(c, data, {nullptr, {}, false}).report.best_dev);
    }
    return out;
}

Outcome gradient_suite() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(2024);
    double worst = 0.0;
    std::string worst_name;
    for (const auto& c : maskmatch::testing::primitive_gradient_cases()) {
        const double e = maskmatch::testing::primitive_worst_error(c, rng, kGradTrials);
        if (e >= worst) {
            worst = e;
            worst_name = c.name;
        }
    }
    double encoder_worst = 0.0;
    for (int t = 0; t < kGradTrials; ++t)
        encoder_worst = std::max(encoder_worst, maskmatch::testing::encoder_gradient_trial(rng));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {worst < kGradRelTol && encoder_worst < kGradRelTol && secs < kGradBudgetSeconds,
            "primitives max rel err " + fmt(worst, 3) + " (" + worst_name + "), 2-layer encoder " +
                fmt(encoder_worst, 3) + ", " + std::to_string(kGradTrials) + " trials each, " + fmt(secs, 3) +
                "s; need < " + fmt(kGradRelTol) + " and < " + fmt(kGradBudgetSeconds) + "s"};
}

Outcome scoring_oracle() {
    Rng rng(11);
    const auto w = maskmatch::testing::scoring_oracle(rng, kOracleTriples);
    return {w.argmax_mismatches == 0 && w.probability <= kOracleTol && w.loss <= kOracleTol,
            std::to_string(kOracleTriples) + " triples: max |dp| " + fmt(w.probability, 3) + ", max |dloss| " +
                fmt(w.loss, 3) + ", argmax mismatches " + std::to_string(w.argmax_mismatches) + "; need <= " +
                fmt(kOracleTol)};
}

Outcome learnability() {
    const Dataset data = generate_synthetic(main_task());
    TrainRunConfig c = desk_config();
    c.epochs = kLearnMaxEpochs;
    c.target_dev = kLearnTarget;
    const double cpu0 = cpu_seconds();
    const auto r = train<double>(c, data, {nullptr, {}, false}).report;
    const double cpu = cpu_seconds() - cpu0;
    return {r.train_examples == 2000 && r.best_dev >= kLearnTarget && cpu < kLearnBudgetSeconds,
            "dev accuracy " + fmt(r.best_dev) + " at epoch " + std::to_string(r.best_epoch) + " on " +
                std::to_string(r.train_examples) + " train examples, " + fmt(cpu, 3) + "s CPU; need >= " +
                fmt(kLearnTarget) + " within " + std::to_string(kLearnMaxEpochs) + " epochs and " +
                fmt(kLearnBudgetSeconds) + "s"};
}

Outcome paradigm_parity() {
    SyntheticSpec s;
    s.name = "separable2";
    s.classes = 2;
    s.per_class = 100;
    s.informativeness = 1.0;
    s.noise = 0.0;
    const Dataset data = generate_synthetic(s);
    TrainRunConfig c = desk_config();
    c.epochs = 50;
    bool ok = true;
    std::string detail;
    for (auto kind : kAllParadigms) {
        c.paradigm = kind;
        const double dev = train<double>(c, data, {nullptr, {}, false}).report.best_dev;
        ok = ok && dev >= kParityFloor;
        detail += std::string(to_string(kind)) + " " + fmt(dev) + ", ";
    }
    return {ok, detail + "need each >= " + fmt(kParityFloor)};
}

Outcome low_resource() {
    const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    TrainRunConfig c = desk_config();
    c.low_resource = kLowResourceFraction;
    c.epochs = 60;
    c.patience = 10;
    auto margin_for = [&](std::size_t classes, double& mm, double& pt) {
        SyntheticSpec s;
        s.name = "lowres" + std::to_string(classes);
        s.classes = classes;
        s.per_class = 100;
        s.informativeness = kLowResourceInformativeness;
        s.noise = 0.1;
        const Dataset data = generate_synthetic(s);
        TrainRunConfig cm = c, cp = c;
        cm.paradigm = ParadigmKind::kMaskMatch;
        cp.paradigm = ParadigmKind::kPromptTune;
        mm = mean_of(dev_over_seeds(cm, data, seeds));
        pt = mean_of(dev_over_seeds(cp, data, seeds));
        return mm - pt;
    };
    double mm8, pt8, mm32, pt32, mm2, pt2;
    const double m8 = margin_for(8, mm8, pt8);
    const double m32 = margin_for(32, mm32, pt32);
    const double m2 = margin_for(2, mm2, pt2);
    const bool ok = m8 >= -kLowResourceSlack && m32 > 0.0;
    return {ok, "mm - pt over 5 seeds at 10%: n=8 " + fmt(mm8) + " - " + fmt(pt8) + " = " + fmt(m8, 3) +
                    " (need >= -" + fmt(kLowResourceSlack) + "), n=32 " + fmt(mm32) + " - " + fmt(pt32) + " = " +
                    fmt(m32, 3) + " (need > 0), n=2 margin " + fmt(m2, 3) + " (reported only)"};
}

Outcome template_insensitivity() {
    const Dataset data = generate_synthetic(main_task());
    TrainRunConfig c = desk_config();
    c.epochs = 5;
    std::vector<double> means;
    std::string detail;
    for (auto t : kAllLabelTemplates) {
        c.label_template = t;
        means.push_back(mean_of(dev_over_seeds(c, data, {1, 2, 3})));
        detail += std::string(to_string(t)) + " " + fmt(means.back()) + ", ";
    }
    const double spread = *std::max_element(means.begin(), means.end()) - *std::min_element(means.begin(), means.end());
    return {spread <= kTemplateSpreadMax,
            detail + "max - min " + fmt(spread, 3) + "; need <= " + fmt(kTemplateSpreadMax)};
}

Outcome augmentation() {
    const Dataset data = generate_synthetic(main_task());
    TrainRunConfig c = desk_config();
    c.epochs = 5;
    const double plain = mean_of(dev_over_seeds(c, data, {1, 2, 3}));
    c.augment = true;
    const double aug = mean_of(dev_over_seeds(c, data, {1, 2, 3}));
    return {aug >= plain - kAugmentDropMax, "mean dev accuracy " + fmt(plain) + " plain, " + fmt(aug) +
                                                " augmented (change " + fmt(aug - plain, 3) + "); need >= -" +
                                                fmt(kAugmentDropMax)};
}

Outcome determinism_and_accumulation() {
    SyntheticSpec s;
    s.classes = 3;
    s.per_class = 30;
    s.vocab_size = 60;
    s.length = 8;
    const Dataset data = generate_synthetic(s);
    TrainRunConfig c = desk_config();
    c.encoder.hidden_dim = 16;
    c.encoder.ffn_dim = 32;
    c.epochs = 3;
    c.selection = Selection::kFinalEpoch;

    bool identical = true;
    double accum_worst = 0.0;
    for (auto kind : kAllParadigms) {
        TrainRunConfig a = c;
        a.paradigm = kind;
        a.batch_size = 2;
        a.grad_accum = 4;
        const auto r1 = train<double>(a, data, {nullptr, {}, false});
        const auto r2 = train<double>(a, data, {nullptr, {}, false});
        identical = identical && r1.report.loss_log == r2.report.loss_log;

        TrainRunConfig b = a;
        b.batch_size = 8;
        b.grad_accum = 1;
        const auto big = train<double>(b, data, {nullptr, {}, false});
        for (std::size_t i = 0; i < r1.report.loss_log.size(); ++i)
            accum_worst = std::max(accum_worst, std::abs(r1.report.loss_log[i] - big.report.loss_log[i]));
        auto ia = r1.model.params().begin();
        for (auto ib = big.model.params().begin(); ib != big.model.params().end(); ++ia, ++ib)
            for (std::size_t k = 0; k < ia->value.size(); ++k)
                accum_worst = std::max(accum_worst, std::abs(ia->value[k] - ib->value[k]));
    }
    return {identical && accum_worst <= kAccumTol,
            std::string("reruns ") + (identical ? "bitwise identical" : "DIFFER") +
                " for all paradigms; accum 2x4 vs 8x1 max |diff| over losses and parameters " + fmt(accum_worst, 3) +
                "; need <= " + fmt(kAccumTol)};
}

std::vector<std::string> fixture_lines(const std::string& name) {
    std::ifstream is(std::string(MASKMATCH_SOURCE_DIR) + "/tests/fixtures/" + name, std::ios::binary);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty() && line[0] != '#') out.push_back(line);
    return out;
}

Outcome golden_templates() {
    const auto exemplars = maskmatch::testing::family_exemplars();
    const auto inputs = fixture_lines("golden_input_prompts.txt");
    const auto labels = fixture_lines("golden_label_prompts.txt");
    std::size_t matched = 0, total = exemplars.size() + 5;
    if (inputs.size() == exemplars.size()) {
        for (std::size_t i = 0; i < inputs.size(); ++i)
            matched += render_input(exemplars[i].second, exemplars[i].first).text() == inputs[i];
    }
    if (labels.size() == 5) {
        for (std::size_t i = 0; i < 4; ++i) matched += render_label("organization", kAllLabelTemplates[i]) == labels[i];
        matched += render_label("person", LabelTemplate::kP1, Augmentation{"human", "individual"}) == labels[4];
    }
    return {matched == total, std::to_string(matched) + "/" + std::to_string(total) +
                                  " renderings byte-identical (six input prompts, five label prompts)"};
}

Outcome metric_correctness() {
    struct Case {
        std::vector<std::size_t> pred, gold;
        std::size_t classes;
        double acc, micro, macro;
    };
    const std::vector<Case> cases = {
        {{0, 0, 1}, {0, 1, 1}, 2, 2.0 / 3, 2.0 / 3, 2.0 / 3},
        {{2, 0, 1, 1}, {2, 0, 1, 1}, 3, 1.0, 1.0, 1.0},
        {{0, 0, 0, 1}, {0, 0, 0, 0}, 2, 0.75, 0.75, 3.0 / 7},
    };
    std::size_t exact = 0;
    for (const auto& c : cases) {
        exact += accuracy(c.pred, c.gold) == c.acc;
        exact += micro_f1(c.pred, c.gold, c.classes) == c.micro;
        exact += macro_f1(c.pred, c.gold, c.classes) == c.macro;
    }
    const bool penalised = macro_f1(cases[2].pred, cases[2].gold, 2) < micro_f1(cases[2].pred, cases[2].gold, 2);
    return {exact == 3 * cases.size() && penalised,
            std::to_string(exact) + "/" + std::to_string(3 * cases.size()) +
                " hand-computed values reproduced exactly; single-class macro below micro: " +
                (penalised ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::vector<int> only;
    app.add_option("--only", only, "run only these criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient suite", gradient_suite},
        {"scoring oracle", scoring_oracle},
        {"learnability", learnability},
        {"paradigm parity", paradigm_parity},
        {"low-resource direction", low_resource},
        {"template insensitivity", template_insensitivity},
        {"augmentation direction", augmentation},
        {"determinism and accumulation", determinism_and_accumulation},
        {"golden templates", golden_templates},
        {"metric correctness", metric_correctness},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.contains(id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !o.pass;
        std::cout << "criterion " << std::setw(2) << id << "  " << (o.pass ? "PASS" : "FAIL") << "  "
                  << criteria[i].first << ": " << o.detail << "  [" << fmt(secs, 3) << "s]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
