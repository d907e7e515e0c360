#include <cmath>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "maskmatch/harness.hpp"
#include "maskmatch/results.hpp"
#include "support/tempdir.hpp"

using namespace maskmatch;
using maskmatch::testing::TempDir;

namespace {

Dataset small_synthetic(std::size_t classes = 2, std::size_t per_class = 20, std::uint64_t seed = 3) {
    SyntheticSpec s;
    s.classes = classes;
    s.per_class = per_class;
    s.vocab_size = 60;
    s.length = 6;
    s.seed = seed;
    return generate_synthetic(s);
}

TrainRunConfig tiny_config() {
    TrainRunConfig c;
    c.encoder.layers = 1;
    c.encoder.hidden_dim = 16;
    c.encoder.heads = 2;
    c.encoder.ffn_dim = 32;
    c.max_input_length = 32;
    c.encoder.max_positions = 32;
    c.batch_size = 4;
    c.grad_accum = 2;
    c.peak_lr = 3e-3;
    c.epochs = 2;
    return c;
}

double max_abs_diff(const ParameterSet<double>& a, const ParameterSet<double>& b) {
    double worst = 0.0;
    auto ia = a.begin();
    for (auto ib = b.begin(); ib != b.end(); ++ia, ++ib) {
        EXPECT_EQ(ia->name, ib->name);
        const auto da = ia->value.data();
        const auto db = ib->value.data();
        for (std::size_t i = 0; i < da.size(); ++i) worst = std::max(worst, std::abs(da[i] - db[i]));
    }
    return worst;
}

}  // namespace

TEST(Train, AccumulationMatchesLargeBatch) {
    const Dataset data = small_synthetic(2, 25);
    for (auto kind : kAllParadigms) {
        TrainRunConfig accum = tiny_config();
        accum.paradigm = kind;
        accum.batch_size = 2;
        accum.grad_accum = 4;
        accum.epochs = 3;
        accum.selection = Selection::kFinalEpoch;
        TrainRunConfig big = accum;
        big.batch_size = 8;
        big.grad_accum = 1;

        auto a = train<double>(accum, data);
        auto b = train<double>(big, data);
        ASSERT_EQ(a.report.loss_log.size(), b.report.loss_log.size());
        for (std::size_t i = 0; i < a.report.loss_log.size(); ++i) {
            EXPECT_NEAR(a.report.loss_log[i], b.report.loss_log[i], 1e-10) << to_string(kind) << " step " << i;
        }
        EXPECT_LT(max_abs_diff(a.model.params(), b.model.params()), 1e-10) << to_string(kind);
    }
}

TEST(Train, RerunsAreBitwiseIdentical) {
    const Dataset data = small_synthetic();
    TrainRunConfig c = tiny_config();
    c.encoder.dropout = 0.1;
    auto a = train<double>(c, data);
    auto b = train<double>(c, data);
    ASSERT_FALSE(a.report.loss_log.empty());
    EXPECT_EQ(a.report.loss_log, b.report.loss_log);
    EXPECT_EQ(a.report.best_dev, b.report.best_dev);
    EXPECT_EQ(a.report.digest, b.report.digest);
    EXPECT_EQ(max_abs_diff(a.model.params(), b.model.params()), 0.0);

    c.seed = 2;
    auto other = train<double>(c, data);
    EXPECT_NE(a.report.loss_log, other.report.loss_log);
}

TEST(Train, StepAndScheduleAccounting) {
    const Dataset data = small_synthetic(2, 25);  // 40 train examples
    TrainRunConfig c = tiny_config();
    c.batch_size = 3;   // 14 batches
    c.grad_accum = 4;   // 4 windows
    c.epochs = 3;
    auto r = train<double>(c, data).report;
    const std::size_t batches = (r.train_examples + 2) / 3;
    const std::size_t expected = ((batches + 3) / 4) * 3;
    EXPECT_EQ(r.train_examples, 40u);
    EXPECT_EQ(expected, 12u);
    EXPECT_EQ(r.planned_steps, expected);
    EXPECT_EQ(r.optimizer_steps, expected);
    EXPECT_EQ(r.lr_queries, r.optimizer_steps);
    EXPECT_EQ(r.loss_log.size(), expected);
    EXPECT_EQ(r.epochs.size(), 3u);
    for (const auto& e : r.epochs) {
        EXPECT_GE(e.dev_metric, 0.0);
        EXPECT_LE(e.dev_metric, 1.0);
    }
}

TEST(Train, LoggedLossMatchesIndependentRecomputation) {
    const Dataset data = small_synthetic(3, 15);
    TrainRunConfig c = tiny_config();
    c.batch_size = data.train.size();
    c.grad_accum = 1;
    c.epochs = 1;
    c.temperature = 0.7;
    const double logged = train<double>(c, data).report.loss_log.at(0);

    const TemplateLibrary templates;
    Rng rng(c.seed);
    Model<double> model(model_spec<double>(c, data.manifest, templates),
                        build_vocab(c, data.manifest, data.train, templates), rng);
    const CachedBank<double> bank = model.cached_bank();
    double total = 0.0;
    for (const auto& ex : data.train) {
        Tape<double> tape;
        const Tensor<double> h = model.repr(tape, model.encode(ex)).value();
        std::vector<double> z(bank.size());
        for (std::size_t i = 0; i < bank.size(); ++i) {
            double dot = 0.0;
            for (std::size_t k = 0; k < h.size(); ++k) dot += h.data()[k] * bank.vectors(i, k);
            z[i] = dot / c.temperature;
        }
        double top = z[0];
        for (double v : z) top = std::max(top, v);
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - top);
        total += std::min(top + std::log(sum) - z[ex.gold], -std::log(1e-12));
    }
    EXPECT_NEAR(logged, total / static_cast<double>(data.train.size()), 1e-12);
}

TEST(Train, NonFiniteLossIsNumericFailureWithCheckpoint) {
    TempDir dir;
    const Dataset data = small_synthetic();
    TrainRunConfig c = tiny_config();
    c.peak_lr = 1e300;
    c.warmup_ratio = 0.0;
    c.clip_norm = 0.0;
    TrainOptions opts;
    opts.failure_checkpoint = dir / "last_good.ckpt";
    try {
        train<double>(c, data, opts);
        FAIL() << "expected a numeric failure";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kNumericFailure);
        EXPECT_EQ(exit_code(e.kind()), 4);
        EXPECT_NE(std::string(e.what()).find("last_good.ckpt"), std::string::npos);
    }
    ASSERT_TRUE(std::filesystem::exists(opts.failure_checkpoint));
    auto restored = load_checkpoint<double>(opts.failure_checkpoint);
    for (const auto& p : restored.model.params())
        for (double v : p.value.data()) ASSERT_TRUE(std::isfinite(v)) << p.name;
}

TEST(Train, TargetDevStopsEarlyAndBestDevIsKept) {
    const Dataset data = small_synthetic();
    TrainRunConfig c = tiny_config();
    c.epochs = 30;
    c.target_dev = 0.0;
    auto r = train<double>(c, data).report;
    EXPECT_EQ(r.epochs.size(), 1u);
    EXPECT_TRUE(r.stopped_early);

    c.target_dev.reset();
    c.epochs = 4;
    auto full = train<double>(c, data);
    double best = 0.0;
    for (const auto& e : full.report.epochs) best = std::max(best, e.dev_metric);
    EXPECT_EQ(full.report.best_dev, best);
    EXPECT_EQ(evaluate(full.model, data.dev, Metric::kAccuracy).value, best);
}

TEST(Train, SeparableTaskIsLearned) {
    SyntheticSpec s;
    s.classes = 2;
    s.per_class = 50;
    s.vocab_size = 40;
    s.length = 8;
    s.informativeness = 1.0;
    s.noise = 0.0;
    const Dataset data = generate_synthetic(s);
    TrainRunConfig c = tiny_config();
    c.epochs = 50;
    c.target_dev = 0.99;
    auto r = train<double>(c, data).report;
    EXPECT_GE(r.best_dev, 0.99);
}

TEST(Train, FloatPrecisionRuns) {
    TrainRunConfig c = tiny_config();
    c.precision = Precision::kFloat;
    auto r = train_report(c, small_synthetic());
    EXPECT_EQ(r.epochs.size(), 2u);
    EXPECT_TRUE(std::isfinite(r.loss_log.back()));
}

TEST(Evaluate, MetricMismatchIsConfigError) {
    const Dataset data = small_synthetic();
    auto result = train<double>(tiny_config(), data);
    try {
        evaluate(result.model, data, "dev", Metric::kMacroF1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    }
    const auto ok = evaluate(result.model, data, "dev", Metric::kAccuracy);
    EXPECT_EQ(ok.predictions.size(), data.dev.size());
    EXPECT_EQ(ok.value, ok.accuracy);

    std::ostringstream dump;
    write_predictions(dump, ok, data.dev, data.manifest.labels);
    const std::string text = dump.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), static_cast<long>(data.dev.size() + 1));
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
    TempDir dir;
    const Dataset data = small_synthetic(3, 15);
    for (auto kind : kAllParadigms) {
        TrainRunConfig c = tiny_config();
        c.paradigm = kind;
        c.augment = true;
        c.label_template = LabelTemplate::kP3;
        auto trained = train<double>(c, data);
        const auto path = dir / (std::string(to_string(kind)) + ".ckpt");
        save_checkpoint(path, trained.model, c, data.manifest);
        auto loaded = load_checkpoint<double>(path);
        EXPECT_EQ(loaded.config.digest(), c.digest());
        EXPECT_EQ(loaded.manifest.labels, data.manifest.labels);
        EXPECT_EQ(max_abs_diff(loaded.model.params(), trained.model.params()), 0.0);
        const auto before = evaluate(trained.model, data.test, Metric::kAccuracy);
        const auto after = evaluate(loaded.model, data.test, Metric::kAccuracy);
        EXPECT_EQ(before.predictions, after.predictions);
    }
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
    TempDir dir;
    auto expect_data = [&](const std::string& text) {
        maskmatch::testing::write_file(dir / "bad.ckpt", text);
        try {
            load_checkpoint<double>(dir / "bad.ckpt");
            FAIL() << text;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::kData) << e.what();
        }
    };
    expect_data("");
    expect_data("not a checkpoint\n");
    expect_data(std::string(kCheckpointMagic) + "\nparadigm=mm\n");

    const Dataset data = small_synthetic();
    auto trained = train<double>(tiny_config(), data);
    save_checkpoint(dir / "good.ckpt", trained.model, tiny_config(), data.manifest);
    const std::string good = maskmatch::testing::read_file(dir / "good.ckpt");
    expect_data(good.substr(0, good.size() - 40));
}

TEST(Compare, StructureSeedsAndSpread) {
    const Dataset data = small_synthetic();
    TrainRunConfig c = tiny_config();
    c.epochs = 1;
    std::vector<RunRecord> seen;
    auto table = compare(c, {data}, {ParadigmKind::kFineTune, ParadigmKind::kPromptTune, ParadigmKind::kSemanticMatch,
                                     ParadigmKind::kMaskMatch, ParadigmKind::kMaskMatch},
                         {1, 2, 3}, "dev", {}, [&](const RunRecord& r) { seen.push_back(r); });
    EXPECT_EQ(table.cells.size(), 5u);
    EXPECT_EQ(seen.size(), 15u);
    for (const auto& cell : table.cells) {
        EXPECT_EQ(cell.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
        ASSERT_EQ(cell.values.size(), 3u);
        double mean = (cell.values[0] + cell.values[1] + cell.values[2]) / 3.0;
        EXPECT_NEAR(cell.mean, mean, 1e-15);
        double ss = 0.0;
        for (double v : cell.values) ss += (v - mean) * (v - mean);
        EXPECT_NEAR(cell.spread, std::sqrt(ss / 2.0), 1e-15);
    }
    EXPECT_EQ(table.cells[3].values, table.cells[4].values);
    const std::string text = format_table(table, "accuracy");
    EXPECT_NE(text.find("ft"), std::string::npos);
    EXPECT_NE(text.find(data.manifest.name), std::string::npos);
}

TEST(Compare, LowResourceDefaultsToFiveSeeds) {
    TrainRunConfig c = tiny_config();
    EXPECT_EQ(default_seeds(c).size(), 3u);
    c.low_resource = 0.1;
    EXPECT_EQ(default_seeds(c), (std::vector<std::uint64_t>{1, 2, 3, 4, 5}));
}

TEST(Compare, FailedRunMarksCellAndContinues) {
    Dataset data = small_synthetic();
    Dataset broken = data;
    broken.manifest.name = "broken";
    broken.dev.clear();
    TrainRunConfig c = tiny_config();
    c.epochs = 1;
    auto table = compare(c, {data, broken}, {ParadigmKind::kMaskMatch}, {1, 2});
    EXPECT_TRUE(table.cell("mm", data.manifest.name).complete());
    const auto& bad = table.cell("mm", "broken");
    EXPECT_FALSE(bad.complete());
    EXPECT_EQ(bad.failures.size(), 2u);
    EXPECT_EQ(bad.seeds.size(), 2u);
    EXPECT_NE(format_table(table).find("FAILED"), std::string::npos);
}

TEST(Sweep, OneColumnPerTemplateWithDefaultMarked) {
    const Dataset data = small_synthetic();
    TrainRunConfig c = tiny_config();
    c.epochs = 1;
    auto table = sweep_templates(c, data, {LabelTemplate::kP1, LabelTemplate::kP2, LabelTemplate::kP3, LabelTemplate::kP4},
                                 {1, 2});
    EXPECT_EQ(table.rows, (std::vector<std::string>{"P1", "P2", "P3", "P4"}));
    EXPECT_EQ(table.default_row, "P1");
    double lo = 1.0, hi = 0.0;
    for (const auto& cell : table.cells) {
        EXPECT_EQ(cell.seeds, (std::vector<std::uint64_t>{1, 2}));
        lo = std::min(lo, cell.mean);
        hi = std::max(hi, cell.mean);
    }
    EXPECT_DOUBLE_EQ(table.spread_of_means(data.manifest.name), hi - lo);
    EXPECT_NE(format_table(table).find("P1 *"), std::string::npos);

    c.paradigm = ParadigmKind::kPromptTune;
    EXPECT_THROW(sweep_templates(c, data, {LabelTemplate::kP1}), Error);
}

TEST(Results, CsvAndJsonMirror) {
    TempDir dir;
    const Dataset data = small_synthetic();
    TrainRunConfig c = tiny_config();
    c.epochs = 1;
    RunRecord rec{c, train_report(c, data), std::nullopt};
    ResultsWriter writer(dir / "out" / "results.csv");
    writer.add(rec);
    writer.write();

    const std::string csv = maskmatch::testing::read_file(writer.csv_path());
    std::istringstream lines(csv);
    std::string header, dev, test;
    std::getline(lines, header);
    std::getline(lines, dev);
    std::getline(lines, test);
    EXPECT_EQ(header, "run_id,paradigm,dataset,template,seed,metric,value,wall_seconds");
    EXPECT_EQ(dev.rfind(rec.report.run_id + ",mm,synthetic,P1,1,dev_accuracy,", 0), 0u) << dev;
    EXPECT_EQ(test.rfind(rec.report.run_id + ",mm,synthetic,P1,1,test_accuracy,", 0), 0u) << test;

    const auto j = nlohmann::json::parse(maskmatch::testing::read_file(writer.json_path()));
    ASSERT_EQ(j["runs"].size(), 1u);
    const auto& run = j["runs"][0];
    EXPECT_EQ(run["run_id"], rec.report.run_id);
    EXPECT_EQ(run["config"]["batch_size"], "4");
    EXPECT_EQ(run["config"]["hidden_dim"], "16");
    EXPECT_EQ(run["config_digest"], c.digest());
    EXPECT_EQ(run["dev"].get<double>(), rec.report.best_dev);
}

TEST(Results, RunIdEncodesSettings) {
    TrainRunConfig c;
    c.paradigm = ParadigmKind::kSemanticMatch;
    c.label_template = LabelTemplate::kP2;
    c.seed = 7;
    EXPECT_EQ(make_run_id(c, "r8"), "r8-sm-P2-s7");
    c.augment = true;
    c.low_resource = 0.1;
    EXPECT_EQ(make_run_id(c, "r8"), "r8-sm-P2-aug-low0.1-s7");
}

TEST(Config, ParseRoundTripAndErrors) {
    TrainRunConfig c = tiny_config();
    c.low_resource = 0.1;
    c.target_dev = 0.95;
    c.paradigm = ParadigmKind::kPromptTune;
    const auto back = TrainRunConfig::parse(c.to_keyvalues());
    EXPECT_EQ(back.digest(), c.digest());
    EXPECT_EQ(back.effective_batch(), 8u);

    auto expect_config = [](const std::string& text) {
        try {
            TrainRunConfig::parse(KeyValues::parse_text(text, "test"));
            FAIL() << text;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::kConfig) << text;
        }
    };
    expect_config("bogus=1\n");
    expect_config("batch_size=0\n");
    expect_config("paradigm=xx\n");
    expect_config("peak_lr=-1\n");
    expect_config("low_resource=2\n");
    expect_config("pool=sum\n");
    expect_config("hidden_dim=10\nheads=4\n");

    const TrainRunConfig defaults = TrainRunConfig::parse(KeyValues{});
    EXPECT_EQ(defaults.batch_size, 8u);
    EXPECT_EQ(defaults.grad_accum, 4u);
    EXPECT_EQ(defaults.peak_lr, 1e-5);
    EXPECT_EQ(defaults.warmup_ratio, 0.2);
    EXPECT_EQ(defaults.epochs, 20u);
    EXPECT_EQ(defaults.max_input_length, 500u);
}
