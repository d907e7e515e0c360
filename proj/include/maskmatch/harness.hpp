#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "maskmatch/checkpoint.hpp"
#include "maskmatch/config.hpp"
#include "maskmatch/data.hpp"
#include "maskmatch/metrics.hpp"
#include "maskmatch/numerics/optim.hpp"
#include "maskmatch/paradigms.hpp"

namespace maskmatch {

// Vocabulary over every text the model can see at training time: prompted and
// plain renderings of the training split, and all label prompts.
inline Vocab build_vocab(const TrainRunConfig& config, const DatasetManifest& manifest, const Split& train,
                         const TemplateLibrary& templates) {
    std::vector<std::string> corpus;
    RenderOptions render{config.pair_separator};
    for (const auto& ex : train) {
        corpus.push_back(render_input(ex, manifest.family, render, templates).text());
        corpus.push_back(render_plain(ex, manifest.family, render).text());
    }
    for (std::size_t i = 0; i < manifest.labels.size(); ++i) {
        for (auto t : kAllLabelTemplates) {
            corpus.push_back(render_label(manifest.labels[i], t, std::nullopt, templates));
            if (!manifest.augmentation.empty()) {
                corpus.push_back(render_label(manifest.labels[i], t, manifest.augmentation[i], templates));
            }
        }
    }
    return Vocab::build(corpus, config.min_count);
}

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double dev_metric = 0.0;
};

struct RunReport {
    std::string run_id;
    std::string dataset;
    ParadigmKind paradigm = ParadigmKind::kMaskMatch;
    LabelTemplate label_template = LabelTemplate::kP1;
    std::uint64_t seed = 0;
    Metric metric = Metric::kAccuracy;
    std::string digest;

    double best_dev = 0.0;
    std::size_t best_epoch = 0;
    std::optional<double> test;
    std::vector<EpochLog> epochs;
    std::vector<double> loss_log;  // mean loss of every optimizer step
    std::size_t planned_steps = 0;
    std::size_t optimizer_steps = 0;
    std::size_t lr_queries = 0;
    std::size_t train_examples = 0;
    bool guard_applied = false;
    bool stopped_early = false;
    double wall_seconds = 0.0;
};

inline std::string make_run_id(const TrainRunConfig& c, const std::string& dataset) {
    std::string id = dataset + "-" + std::string(to_string(c.paradigm)) + "-" + std::string(to_string(c.label_template));
    if (c.augment) id += "-aug";
    if (c.low_resource) {
        std::ostringstream os;
        os << *c.low_resource;
        id += "-low" + os.str();
    }
    return id + "-s" + std::to_string(c.seed);
}

struct EvalResult {
    Metric metric = Metric::kAccuracy;
    double value = 0.0;
    double accuracy = 0.0;
    std::vector<std::size_t> predictions;
    std::size_t ties = 0;
};

template <typename T>
EvalResult evaluate_encoded(const Model<T>& model, const std::vector<TokenSequence>& seqs,
                            const std::vector<std::size_t>& gold, Metric metric) {
    const CachedBank<T> bank = model.cached_bank();
    EvalResult r;
    r.metric = metric;
    r.predictions.reserve(seqs.size());
    for (const auto& s : seqs) {
        const auto p = model.predict(s, bank);
        r.predictions.push_back(p.argmax);
        r.ties += p.tie;
    }
    check_metric_identity(r.predictions, gold, model.classes());
    r.accuracy = accuracy(r.predictions, gold);
    r.value = score(metric, r.predictions, gold, model.classes());
    return r;
}

template <typename T>
EvalResult evaluate(const Model<T>& model, const Split& split, Metric metric) {
    if (split.empty()) fail(ErrorKind::kData, "cannot evaluate an empty split");
    std::vector<TokenSequence> seqs;
    std::vector<std::size_t> gold;
    for (const auto& ex : split) {
        seqs.push_back(model.encode(ex));
        gold.push_back(ex.gold);
    }
    return evaluate_encoded(model, seqs, gold, metric);
}

// Scores one split of a dataset. A requested metric must agree with the one
// the dataset declares.
template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& data, std::string_view split,
                    std::optional<Metric> requested = std::nullopt) {
    if (requested && *requested != data.manifest.metric) {
        fail(ErrorKind::kConfig, "dataset " + data.manifest.name + " is scored with " +
                                     std::string(to_string(data.manifest.metric)) + ", not " +
                                     std::string(to_string(*requested)));
    }
    if (model.classes() != data.manifest.classes()) {
        fail(ErrorKind::kConfig, "model has " + std::to_string(model.classes()) + " classes, dataset has " +
                                     std::to_string(data.manifest.classes()));
    }
    return evaluate(model, data.split(split), data.manifest.metric);
}

inline void write_predictions(std::ostream& os, const EvalResult& r, const Split& split,
                              const std::vector<std::string>& labels) {
    os << "index\tgold\tprediction\n";
    for (std::size_t i = 0; i < r.predictions.size(); ++i) {
        os << i << '\t' << labels[split[i].gold] << '\t' << labels[r.predictions[i]] << '\n';
    }
}

struct TrainOptions {
    std::ostream* log = nullptr;
    // Where the last good parameters go when training hits a numeric failure.
    std::filesystem::path failure_checkpoint;
    bool evaluate_test = true;
};

template <typename T>
struct TrainResult {
    Model<T> model;
    RunReport report;
};

template <typename T>
TrainResult<T> train(const TrainRunConfig& config, const Dataset& data, const TrainOptions& opts = {}) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    const auto& manifest = data.manifest;
    if (data.dev.empty()) fail(ErrorKind::kData, manifest.name + ": dev split is empty");

    RunReport report;
    report.dataset = manifest.name;
    report.paradigm = config.paradigm;
    report.label_template = config.label_template;
    report.seed = config.seed;
    report.metric = manifest.metric;
    report.digest = config.digest();
    report.run_id = make_run_id(config, manifest.name);
    auto log = [&](const std::string& line) {
        if (opts.log) *opts.log << report.run_id << ": " << line << '\n';
    };

    Split train_split = data.train;
    if (config.low_resource) {
        auto sub = subsample_low_resource(train_split, *config.low_resource, config.seed, manifest.classes());
        train_split = std::move(sub.examples);
        report.guard_applied = sub.guard_applied;
        if (sub.guard_applied) log("low-resource sample adjusted to cover every class");
    }
    report.train_examples = train_split.size();

    const TemplateLibrary templates = load_templates(config);
    Vocab vocab = build_vocab(config, manifest, train_split, templates);
    Rng init_rng(config.seed);
    Model<T> model(model_spec<T>(config, manifest, templates), std::move(vocab), init_rng);

    std::vector<TokenSequence> train_seqs, dev_seqs;
    std::vector<std::size_t> train_gold, dev_gold;
    for (const auto& ex : train_split) {
        train_seqs.push_back(model.encode(ex));
        train_gold.push_back(ex.gold);
    }
    for (const auto& ex : data.dev) {
        dev_seqs.push_back(model.encode(ex));
        dev_gold.push_back(ex.gold);
    }

    const std::size_t n = train_seqs.size();
    const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
    const std::size_t windows = (batches + config.grad_accum - 1) / config.grad_accum;
    report.planned_steps = windows * config.epochs;
    const LrSchedule schedule{config.peak_lr, config.warmup_ratio, report.planned_steps};
    AdamWConfig hyper;
    hyper.weight_decay = config.weight_decay;
    OptimizerState<T> optimizer;
    optimizer.hyper = hyper;
    Rng order_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    Rng dropout_rng(config.seed ^ 0xd1b54a32d192ed03ull);
    Rng* drop = config.encoder.dropout > 0.0 ? &dropout_rng : nullptr;

    ParameterSet<T> best = model.params();
    ParameterSet<T> last_good = model.params();
    std::size_t since_best = 0;
    std::size_t step = 0;
    std::size_t epoch = 0;
    try {
        for (epoch = 1; epoch <= config.epochs; ++epoch) {
            std::vector<std::size_t> order(n);
            for (std::size_t i = 0; i < n; ++i) order[i] = i;
            order_rng.shuffle(order);
            double epoch_loss = 0.0;
            for (std::size_t w = 0; w < windows; ++w) {
                const std::size_t first = w * config.grad_accum * config.batch_size;
                const std::size_t last = std::min(n, first + config.grad_accum * config.batch_size);
                const T inv_count = T{1} / static_cast<T>(last - first);
                model.params().zero_grad();
                double window_loss = 0.0;
                for (std::size_t b = first; b < last; b += config.batch_size) {
                    Tape<T> tape;
                    const LabelBank<T> bank = model.bank(tape, drop);
                    std::vector<Var<T>> losses;
                    for (std::size_t i = b; i < std::min(last, b + config.batch_size); ++i) {
                        losses.push_back(model.example_loss(tape, train_seqs[order[i]], train_gold[order[i]], bank, drop));
                    }
                    Var<T> batch_loss = scale(sum_of(losses), inv_count);
                    const double value = static_cast<double>(batch_loss.value()[0]);
                    if (!std::isfinite(value)) fail(ErrorKind::kNumericFailure, "loss is not finite");
                    window_loss += value;
                    tape.backward(batch_loss);
                }
                if (config.clip_norm > 0.0) {
                    const double norm = clip_grad_norm(model.params(), config.clip_norm);
                    if (!std::isfinite(norm)) fail(ErrorKind::kNumericFailure, "gradient norm is not finite");
                }
                last_good.assign_values(model.params());
                const double lr = schedule.lr_at(step);
                ++report.lr_queries;
                adamw_step(model.params(), optimizer, lr);
                ++step;
                report.loss_log.push_back(window_loss);
                epoch_loss += window_loss * static_cast<double>(last - first);
            }
            report.optimizer_steps = step;
            const double dev = evaluate_encoded(model, dev_seqs, dev_gold, manifest.metric).value;
            report.epochs.push_back({epoch, epoch_loss / static_cast<double>(n), dev});
            std::ostringstream line;
            line << "epoch " << epoch << " loss " << std::setprecision(6) << epoch_loss / static_cast<double>(n)
                 << " dev " << to_string(manifest.metric) << ' ' << dev;
            log(line.str());
            if (report.best_epoch == 0 || dev > report.best_dev) {
                report.best_dev = dev;
                report.best_epoch = epoch;
                best.assign_values(model.params());
                since_best = 0;
            } else {
                ++since_best;
            }
            if (config.target_dev && dev >= *config.target_dev) {
                report.stopped_early = epoch < config.epochs;
                break;
            }
            if (config.patience > 0 && since_best >= config.patience) {
                report.stopped_early = epoch < config.epochs;
                break;
            }
        }
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNumericFailure && e.kind() != ErrorKind::kNumericInput) throw;
        std::string where = "epoch " + std::to_string(epoch) + ", optimizer step " + std::to_string(step) + ": " +
                            e.what();
        if (!opts.failure_checkpoint.empty()) {
            model.params().assign_values(last_good);
            save_checkpoint(opts.failure_checkpoint, model, config, manifest);
            where += "; last good parameters saved to " + opts.failure_checkpoint.string();
        }
        fail(ErrorKind::kNumericFailure, where);
    }

    if (config.selection == Selection::kBestDev) {
        model.params().assign_values(best);
    } else {
        report.best_dev = report.epochs.back().dev_metric;
        report.best_epoch = report.epochs.back().epoch;
    }
    if (opts.evaluate_test && !data.test.empty()) report.test = evaluate(model, data.test, manifest.metric).value;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return {std::move(model), std::move(report)};
}

// Runs at the configured precision; only the report survives.
inline RunReport train_report(const TrainRunConfig& config, const Dataset& data, const TrainOptions& opts = {}) {
    if (config.precision == Precision::kFloat) return train<float>(config, data, opts).report;
    return train<double>(config, data, opts).report;
}

struct RunRecord {
    TrainRunConfig config;
    RunReport report;
    std::optional<std::string> error;
};

// One table cell: a metric over several seeds.
struct Cell {
    std::string row;
    std::string dataset;
    std::vector<std::uint64_t> seeds;
    std::vector<double> values;
    std::vector<std::string> failures;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double spread = std::numeric_limits<double>::quiet_NaN();  // sample standard deviation

    bool complete() const { return failures.empty() && !values.empty(); }

    void summarise() {
        if (values.empty()) return;
        double s = 0.0;
        for (double v : values) s += v;
        mean = s / static_cast<double>(values.size());
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        spread = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    }
};

struct ComparisonTable {
    std::string split = "dev";
    std::vector<std::string> rows;
    std::vector<std::string> datasets;
    std::vector<Cell> cells;  // row-major
    std::vector<RunRecord> runs;
    std::string default_row;  // highlighted in the rendered table

    const Cell& cell(const std::string& row, const std::string& dataset) const {
        for (const auto& c : cells)
            if (c.row == row && c.dataset == dataset) return c;
        fail(ErrorKind::kContract, "no cell " + row + " x " + dataset);
    }

    // Max minus min of the row means for one dataset.
    double spread_of_means(const std::string& dataset) const {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& c : cells) {
            if (c.dataset != dataset || !c.complete()) continue;
            lo = std::min(lo, c.mean);
            hi = std::max(hi, c.mean);
        }
        return hi - lo;
    }
};

inline std::vector<std::uint64_t> default_seeds(const TrainRunConfig& base) {
    if (base.low_resource) return {1, 2, 3, 4, 5};
    return {1, 2, 3};
}

using RunObserver = std::function<void(const RunRecord&)>;

namespace detail {

inline double report_value(const RunReport& r, const std::string& split) {
    if (split == "test") {
        if (!r.test) fail(ErrorKind::kData, "run " + r.run_id + " has no test score");
        return *r.test;
    }
    return r.best_dev;
}

// Fills one cell by training over seeds. Failed runs are recorded and skipped.
inline void fill_cell(ComparisonTable& table, Cell cell, const TrainRunConfig& cfg_base, const Dataset& data,
                      const std::vector<std::uint64_t>& seeds, const TrainOptions& opts, const RunObserver& observe) {
    for (auto seed : seeds) {
        RunRecord rec;
        rec.config = cfg_base;
        rec.config.seed = seed;
        cell.seeds.push_back(seed);
        try {
            rec.report = train_report(rec.config, data, opts);
            cell.values.push_back(report_value(rec.report, table.split));
        } catch (const Error& e) {
            rec.report.run_id = make_run_id(rec.config, data.manifest.name);
            rec.report.dataset = data.manifest.name;
            rec.report.paradigm = rec.config.paradigm;
            rec.report.label_template = rec.config.label_template;
            rec.report.seed = seed;
            rec.report.metric = data.manifest.metric;
            rec.report.digest = rec.config.digest();
            rec.error = e.what();
            cell.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
            if (opts.log) *opts.log << rec.report.run_id << ": FAILED " << e.what() << '\n';
        }
        if (observe) observe(rec);
        table.runs.push_back(std::move(rec));
    }
    cell.summarise();
    table.cells.push_back(std::move(cell));
}

}  // namespace detail

// Paradigms x datasets under otherwise identical settings.
inline ComparisonTable compare(const TrainRunConfig& base, const std::vector<Dataset>& datasets,
                               const std::vector<ParadigmKind>& paradigms, std::vector<std::uint64_t> seeds = {},
                               const std::string& split = "dev", const TrainOptions& opts = {},
                               const RunObserver& observe = {}) {
    if (paradigms.empty()) fail(ErrorKind::kConfig, "compare needs at least one paradigm");
    if (datasets.empty()) fail(ErrorKind::kConfig, "compare needs at least one dataset");
    if (split != "dev" && split != "test") fail(ErrorKind::kConfig, "split must be dev or test");
    if (seeds.empty()) seeds = default_seeds(base);
    ComparisonTable table;
    table.split = split;
    for (const auto& d : datasets) table.datasets.push_back(d.manifest.name);
    for (auto k : paradigms) {
        table.rows.push_back(std::string(to_string(k)));
        for (const auto& d : datasets) {
            TrainRunConfig cfg = base;
            cfg.paradigm = k;
            Cell cell;
            cell.row = std::string(to_string(k));
            cell.dataset = d.manifest.name;
            detail::fill_cell(table, std::move(cell), cfg, d, seeds, opts, observe);
        }
    }
    return table;
}

// Mask Matching under each label template, same seeds for every template.
inline ComparisonTable sweep_templates(const TrainRunConfig& base, const Dataset& data,
                                       const std::vector<LabelTemplate>& templates,
                                       std::vector<std::uint64_t> seeds = {}, const std::string& split = "dev",
                                       const TrainOptions& opts = {}, const RunObserver& observe = {}) {
    if (base.paradigm != ParadigmKind::kMaskMatch) {
        fail(ErrorKind::kConfig, "template sweep requires the mask-matching paradigm (paradigm=mm)");
    }
    if (templates.empty()) fail(ErrorKind::kConfig, "template sweep needs at least one template");
    if (seeds.empty()) seeds = default_seeds(base);
    ComparisonTable table;
    table.split = split;
    table.default_row = "P1";
    table.datasets.push_back(data.manifest.name);
    for (auto t : templates) {
        table.rows.push_back(std::string(to_string(t)));
        TrainRunConfig cfg = base;
        cfg.label_template = t;
        Cell cell;
        cell.row = std::string(to_string(t));
        cell.dataset = data.manifest.name;
        detail::fill_cell(table, std::move(cell), cfg, data, seeds, opts, observe);
    }
    return table;
}

inline std::string format_table(const ComparisonTable& t, const std::string& metric_name = "") {
    std::ostringstream os;
    os << std::left << std::setw(10) << "";
    for (const auto& d : t.datasets) os << std::setw(24) << d;
    os << '\n';
    for (const auto& row : t.rows) {
        os << std::setw(10) << (row == t.default_row ? row + " *" : row);
        for (const auto& d : t.datasets) {
            const auto& c = t.cell(row, d);
            std::ostringstream cell;
            if (c.complete()) {
                cell << std::fixed << std::setprecision(4) << c.mean << " +- " << c.spread;
            } else if (!c.values.empty()) {
                cell << std::fixed << std::setprecision(4) << c.mean << " (" << c.failures.size() << " failed)";
            } else {
                cell << "FAILED";
            }
            os << std::setw(24) << cell.str();
        }
        os << '\n';
    }
    os << t.split << (metric_name.empty() ? "" : " " + metric_name) << ", mean +- sample std over seeds";
    if (!t.default_row.empty()) os << "; * marks the default template";
    os << '\n';
    return os.str();
}

}  // namespace maskmatch
