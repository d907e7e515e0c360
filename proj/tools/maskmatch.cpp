#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maskmatch/harness.hpp"
#include "maskmatch/results.hpp"

namespace fs = std::filesystem;
using namespace maskmatch;

namespace {

struct RunArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
    bool quiet = false;
};

void add_run_options(CLI::App* cmd, RunArgs& a) {
    cmd->add_option("--config", a.config, "key=value run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--set", a.overrides, "override one config key (key=value), repeatable");
    cmd->add_option("--out", a.out, "results CSV path (a .json mirror is written next to it)");
    cmd->add_flag("--quiet", a.quiet, "suppress per-epoch progress");
}

TrainRunConfig load_config(const RunArgs& a) {
    KeyValues kv = a.config.empty() ? KeyValues{} : KeyValues::load_file(a.config);
    for (const auto& o : a.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) fail(ErrorKind::kConfig, "--set expects key=value, got '" + o + "'");
        kv.set(std::string(trim(o.substr(0, eq))), std::string(trim(o.substr(eq + 1))));
    }
    return TrainRunConfig::parse(kv);
}

template <typename Out>
std::vector<Out> parse_list(const std::string& text, Out (*parse)(std::string_view)) {
    std::vector<Out> out;
    for (const auto& item : split(text, ',')) {
        const auto t = trim(item);
        if (t.empty()) fail(ErrorKind::kConfig, "empty item in list '" + text + "'");
        out.push_back(parse(t));
    }
    return out;
}

std::uint64_t parse_seed(std::string_view s) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(std::string(s), &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::kConfig, "bad seed '" + std::string(s) + "'");
}

LabelTemplate parse_template(std::string_view s) { return parse_label_template(s); }
ParadigmKind parse_kind(std::string_view s) { return parse_paradigm(s); }

// Without --data, runs use the default synthetic task.
std::vector<Dataset> load_datasets(const std::vector<std::string>& paths, std::ostream& log) {
    std::vector<Dataset> out;
    if (paths.empty()) {
        log << "no --data given; using the default synthetic task\n";
        out.push_back(generate_synthetic(SyntheticSpec{}));
        return out;
    }
    for (const auto& p : paths) out.push_back(load_dataset(fs::path(p)));
    return out;
}

std::string default_out(const std::string& stem) { return (fs::path("results") / (stem + ".csv")).string(); }

int cmd_train(const RunArgs& a, const std::string& data, std::optional<std::uint64_t> seed,
              const std::string& checkpoint) {
    TrainRunConfig config = load_config(a);
    if (seed) config.seed = *seed;
    config.validate();
    const Dataset dataset = load_dataset(fs::path(data));
    TrainOptions opts;
    opts.log = a.quiet ? nullptr : &std::cerr;
    const std::string run_id = make_run_id(config, dataset.manifest.name);
    const fs::path ckpt = checkpoint.empty() ? fs::path("checkpoints") / (run_id + ".ckpt") : fs::path(checkpoint);
    if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
    opts.failure_checkpoint = ckpt.string() + ".last_good";

    RunRecord rec;
    rec.config = config;
    auto finish = [&](auto result) {
        save_checkpoint(ckpt, result.model, config, dataset.manifest);
        rec.report = std::move(result.report);
    };
    if (config.precision == Precision::kFloat) {
        finish(train<float>(config, dataset, opts));
    } else {
        finish(train<double>(config, dataset, opts));
    }
    ResultsWriter writer(a.out.empty() ? default_out(run_id) : a.out);
    writer.add(rec);
    writer.write();

    const auto& r = rec.report;
    std::cout << r.run_id << "  dev " << to_string(r.metric) << ' ' << r.best_dev << " (epoch " << r.best_epoch << ")";
    if (r.test) std::cout << "  test " << *r.test;
    std::cout << "  " << r.wall_seconds << "s\n";
    std::cout << "checkpoint " << ckpt.string() << "\nresults " << writer.csv_path().string() << '\n';
    return 0;
}

template <typename T>
int eval_with(const fs::path& checkpoint, const std::string& data, const std::string& split,
              std::optional<Metric> metric, const std::string& predictions, const std::string& out) {
    auto loaded = load_checkpoint<T>(checkpoint);
    const Dataset dataset = load_dataset(fs::path(data));
    const auto started = std::chrono::steady_clock::now();
    const EvalResult r = evaluate(loaded.model, dataset, split, metric);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::cout << dataset.manifest.name << ' ' << split << ' ' << to_string(r.metric) << ' ' << r.value << '\n';
    if (r.ties) std::cout << r.ties << " predictions were exact ties\n";
    if (!predictions.empty()) {
        std::ofstream os(predictions);
        if (!os) fail(ErrorKind::kData, "cannot write " + predictions);
        write_predictions(os, r, dataset.split(split), dataset.manifest.labels);
    }
    if (!out.empty()) {
        const std::string run_id = make_run_id(loaded.config, dataset.manifest.name) + "-eval";
        const ResultRow row{run_id, std::string(to_string(loaded.config.paradigm)), dataset.manifest.name,
                            std::string(to_string(loaded.config.label_template)), loaded.config.seed,
                            split + "_" + std::string(to_string(r.metric)), r.value, seconds};
        const fs::path csv(out);
        if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
        std::ofstream os(csv);
        if (!os) fail(ErrorKind::kData, "cannot write " + out);
        write_csv(os, {row});
        nlohmann::json j{{"run_id", run_id},
                         {"checkpoint", checkpoint.string()},
                         {"dataset", dataset.manifest.name},
                         {"split", split},
                         {"metric", std::string(to_string(r.metric))},
                         {"value", r.value},
                         {"ties", r.ties},
                         {"wall_seconds", seconds},
                         {"config", config_json(loaded.config)},
                         {"config_digest", loaded.config.digest()}};
        std::ofstream js(fs::path(csv).replace_extension(".json"));
        js << j.dump(2) << '\n';
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& metric, const std::string& predictions, const std::string& out) {
    std::optional<Metric> m;
    if (!metric.empty()) m = parse_metric(metric);
    // The checkpoint header records the precision it was trained at.
    std::ifstream probe(checkpoint);
    std::string line;
    bool as_float = false;
    while (std::getline(probe, line) && !line.starts_with("templates ")) {
        if (line == "precision=float") as_float = true;
    }
    return as_float ? eval_with<float>(checkpoint, data, split, m, predictions, out)
                    : eval_with<double>(checkpoint, data, split, m, predictions, out);
}

int report_table(const ComparisonTable& table, const std::string& metric, ResultsWriter& writer,
                 const std::string& headline = "") {
    writer.set_table(table);
    writer.write();
    std::cout << format_table(table, metric);
    if (!headline.empty()) std::cout << headline << '\n';
    std::cout << "results " << writer.csv_path().string() << '\n';
    return 0;
}

int cmd_compare(const RunArgs& a, const std::vector<std::string>& data, const std::string& paradigms,
                const std::string& seeds, const std::string& split) {
    const TrainRunConfig base = load_config(a);
    const auto kinds = parse_list(paradigms, parse_kind);
    std::vector<std::uint64_t> seed_list;
    if (!seeds.empty()) seed_list = parse_list(seeds, parse_seed);
    const auto datasets = load_datasets(data, std::cerr);
    TrainOptions opts;
    opts.log = a.quiet ? nullptr : &std::cerr;
    opts.evaluate_test = true;
    ResultsWriter writer(a.out.empty() ? default_out("compare") : a.out);
    const auto table = compare(base, datasets, kinds, seed_list, split, opts,
                               [&](const RunRecord& r) { writer.add(r); });
    return report_table(table, std::string(to_string(datasets.front().manifest.metric)), writer);
}

int cmd_sweep(const RunArgs& a, const std::string& data, const std::string& templates, const std::string& seeds,
              const std::string& split) {
    const TrainRunConfig base = load_config(a);
    const auto ids = parse_list(templates, parse_template);
    std::vector<std::uint64_t> seed_list;
    if (!seeds.empty()) seed_list = parse_list(seeds, parse_seed);
    const auto datasets = load_datasets(data.empty() ? std::vector<std::string>{} : std::vector<std::string>{data},
                                        std::cerr);
    TrainOptions opts;
    opts.log = a.quiet ? nullptr : &std::cerr;
    ResultsWriter writer(a.out.empty() ? default_out("sweep") : a.out);
    const auto table = sweep_templates(base, datasets.front(), ids, seed_list, split, opts,
                                       [&](const RunRecord& r) { writer.add(r); });
    const double spread = table.spread_of_means(datasets.front().manifest.name);
    writer.set_extra("max_minus_min", spread);
    std::ostringstream headline;
    headline << "max - min of template means: " << spread;
    return report_table(table, std::string(to_string(datasets.front().manifest.metric)), writer, headline.str());
}

int cmd_gen(const std::string& spec_path, const std::string& out) {
    const KeyValues kv = KeyValues::load_file(spec_path);
    const SyntheticSpec spec = SyntheticSpec::parse(kv);
    const fs::path dir = out.empty() ? fs::path(kv.get_or("output", "data/" + spec.name)) : fs::path(out);
    Dataset d = generate_synthetic(spec);
    const auto manifest = write_dataset(d, dir);
    std::cout << "wrote " << d.train.size() << '/' << d.dev.size() << '/' << d.test.size()
              << " train/dev/test examples, manifest " << manifest.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mask Matching text classification: training, evaluation and experiment sweeps"};
    app.require_subcommand(1);

    RunArgs train_args;
    std::string train_data, train_ckpt;
    std::optional<std::uint64_t> train_seed;
    auto* train_cmd = app.add_subcommand("train", "train one model and save a checkpoint");
    add_run_options(train_cmd, train_args);
    train_cmd->add_option("--data", train_data, "dataset manifest")->required();
    train_cmd->add_option("--seed", train_seed, "run seed (overrides the config)");
    train_cmd->add_option("--checkpoint", train_ckpt, "checkpoint path (default checkpoints/<run_id>.ckpt)");

    std::string eval_ckpt, eval_data, eval_split = "dev", eval_metric, eval_preds, eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on one split");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", eval_data, "dataset manifest")->required();
    eval_cmd->add_option("--split", eval_split, "dev or test")->check(CLI::IsMember({"dev", "test"}));
    eval_cmd->add_option("--metric", eval_metric, "expected metric; must match the dataset");
    eval_cmd->add_option("--predictions", eval_preds, "write per-example predictions (TSV)");
    eval_cmd->add_option("--out", eval_out, "results CSV path");

    RunArgs cmp_args;
    std::vector<std::string> cmp_data;
    std::string cmp_paradigms = "ft,pt,sm,mm", cmp_seeds, cmp_split = "dev";
    auto* cmp_cmd = app.add_subcommand("compare", "paradigms x datasets under identical settings");
    add_run_options(cmp_cmd, cmp_args);
    cmp_cmd->add_option("--data", cmp_data, "dataset manifests (default: synthetic task)")->delimiter(',');
    cmp_cmd->add_option("--paradigms", cmp_paradigms, "comma-separated subset of ft,pt,sm,mm");
    cmp_cmd->add_option("--seeds", cmp_seeds, "comma-separated seeds (default 1,2,3; 1..5 in low-resource mode)");
    cmp_cmd->add_option("--split", cmp_split, "split reported in the table")->check(CLI::IsMember({"dev", "test"}));

    RunArgs sw_args;
    std::string sw_data, sw_templates = "P1,P2,P3,P4", sw_seeds, sw_split = "dev";
    auto* sw_cmd = app.add_subcommand("sweep-templates", "mask matching under each label template");
    add_run_options(sw_cmd, sw_args);
    sw_cmd->add_option("--data", sw_data, "dataset manifest (default: synthetic task)");
    sw_cmd->add_option("--templates", sw_templates, "comma-separated template ids");
    sw_cmd->add_option("--seeds", sw_seeds, "comma-separated seeds");
    sw_cmd->add_option("--split", sw_split, "split reported in the table")->check(CLI::IsMember({"dev", "test"}));

    std::string gen_spec, gen_out;
    auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a synthetic dataset");
    gen_cmd->add_option("--spec", gen_spec, "key=value generator spec")->required()->check(CLI::ExistingFile);
    gen_cmd->add_option("--out", gen_out, "output directory (default: the spec's output key)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd) return cmd_train(train_args, train_data, train_seed, train_ckpt);
        if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_metric, eval_preds, eval_out);
        if (*cmp_cmd) return cmd_compare(cmp_args, cmp_data, cmp_paradigms, cmp_seeds, cmp_split);
        if (*sw_cmd) return cmd_sweep(sw_args, sw_data, sw_templates, sw_seeds, sw_split);
        if (*gen_cmd) return cmd_gen(gen_spec, gen_out);
    } catch (const Error& e) {
        std::cerr << "maskmatch: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "maskmatch: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
