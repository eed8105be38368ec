#include <gtest/gtest.h>

#include "lmprobe/lmprobe.hpp"
#include "oracles.hpp"

using namespace lmprobe;

namespace {

struct Fixture {
    std::vector<LandmarkRecord> records;
    Split split;
    ActivationBundle bundle;
};

Fixture planted(const std::string& tag, std::vector<LayerKind> layers, double sigma, PlantedTargets planted_kind,
                std::size_t n = 200) {
    Fixture f;
    f.records = synthesize_records(n, 11);
    f.split = split(f.records, SplitSpec{});
    SyntheticSpec spec;
    spec.layers = std::move(layers);
    spec.noise_sigma = sigma;
    spec.planted = planted_kind;
    f.bundle = generate_synthetic(spec, f.records, oracle::temp_dir(tag));
    return f;
}

SweepConfig point_only(ProbeKind probe) {
    SweepConfig c;
    c.probes = {probe};
    c.targets = {TargetKind::point};
    return c;
}

double mean_distance(const SweepResult& r, std::size_t layer, ProbeKind probe) {
    for (const auto& row : r.rows) {
        if (row.layer == layer && row.probe == probe && row.target == TargetKind::point) {
            EXPECT_TRUE(row.ok()) << row.status;
            return row.metric ? row.metric->mean : std::numeric_limits<double>::quiet_NaN();
        }
    }
    ADD_FAILURE() << "row not found";
    return std::numeric_limits<double>::quiet_NaN();
}

// Mean test distance when every test point is predicted as the train mean.
double mean_predictor_distance(const std::vector<LandmarkRecord>& records, const Split& s) {
    double mx = 0, my = 0, mz = 0;
    for (auto i : s.train) {
        mx += records[i].point.x;
        my += records[i].point.y;
        mz += records[i].point.z;
    }
    const auto n = static_cast<double>(s.train.size());
    mx /= n, my /= n, mz /= n;
    double total = 0;
    for (auto i : s.test) {
        const auto& p = records[i].point;
        total += std::sqrt((p.x - mx) * (p.x - mx) + (p.y - my) * (p.y - my) + (p.z - mz) * (p.z - mz));
    }
    return total / static_cast<double>(s.test.size());
}

LandmarkRecord named(std::size_t id, std::string name, double offset) {
    return {id, std::move(name), {offset + 0.5, 0.5, 0.5}, {{offset, 0, 0}, {offset + 1, 1, 1}}};
}

}  // namespace

TEST(Depth, FractionAndTwentyPercentRow) {
    EXPECT_EQ(depth_fraction(0, 5), 0.2);
    EXPECT_EQ(depth_fraction(4, 5), 1.0);
    EXPECT_EQ(layer_at_depth(10), 1u);
    EXPECT_EQ(layer_at_depth(5), 0u);
    EXPECT_EQ(layer_at_depth(32), 5u);
    EXPECT_EQ(layer_at_depth(1), 0u);
    // 4 layers: depths .25 and .5; .25 is nearest.
    EXPECT_EQ(layer_at_depth(4), 0u);
    // 40 layers: layer 7 sits exactly at 0.2.
    EXPECT_EQ(layer_at_depth(40), 7u);
}

TEST(LayerSweep, RowCountAndOrdering) {
    auto f = planted("sweep_rows", {LayerKind::noise, LayerKind::signal}, 0.01, PlantedTargets::both);
    SweepConfig c;
    c.mlp.epochs = 20;
    const auto r = layer_sweep(f.bundle, f.records, f.split, c);
    ASSERT_EQ(r.rows.size(), 8u);
    for (std::size_t i = 1; i < r.rows.size(); ++i) {
        const auto& a = r.rows[i - 1];
        const auto& b = r.rows[i];
        EXPECT_LT(std::tuple(a.layer, static_cast<int>(a.probe), static_cast<int>(a.target)),
                  std::tuple(b.layer, static_cast<int>(b.probe), static_cast<int>(b.target)));
    }
    for (const auto& row : r.rows) {
        EXPECT_TRUE(row.ok()) << row.status;
        EXPECT_EQ(row.metric->kind, row.target == TargetKind::point ? MetricKind::distance : MetricKind::dice);
        EXPECT_EQ(row.metric->per_sample.size(), f.split.test.size());
        EXPECT_EQ(row.lambda.has_value(), row.probe == ProbeKind::linear);
        EXPECT_EQ(row.seed.has_value(), row.probe == ProbeKind::mlp);
    }
}

TEST(LayerSweep, PlantedLayerBeatsNoiseLayer) {
    auto f = planted("sweep_order", {LayerKind::noise, LayerKind::signal}, 0.01, PlantedTargets::point);
    const auto r = layer_sweep(f.bundle, f.records, f.split, point_only(ProbeKind::linear));
    EXPECT_LT(mean_distance(r, 1, ProbeKind::linear), mean_distance(r, 0, ProbeKind::linear));
    EXPECT_LE(mean_distance(r, 1, ProbeKind::linear), 0.05);
}

TEST(LayerSweep, NoiseLayerMatchesMeanPredictor) {
    auto f = planted("sweep_noise", {LayerKind::noise}, 0.01, PlantedTargets::point);
    const auto r = layer_sweep(f.bundle, f.records, f.split, point_only(ProbeKind::linear));
    const double baseline = mean_predictor_distance(f.records, f.split);
    EXPECT_NEAR(mean_distance(r, 0, ProbeKind::linear), baseline, 0.2 * baseline);
}

TEST(LayerSweep, NoiselessSignalIsRecovered) {
    auto f = planted("sweep_exact", {LayerKind::signal}, 0.0, PlantedTargets::point);
    auto c = point_only(ProbeKind::linear);
    c.lambda.fixed = 1e-10;
    const auto r = layer_sweep(f.bundle, f.records, f.split, c);
    EXPECT_LE(mean_distance(r, 0, ProbeKind::linear), 1e-6);
}

TEST(LayerSweep, WarpedLayerFavorsMlp) {
    auto f = planted("sweep_warp", {LayerKind::signal, LayerKind::warped}, 0.1, PlantedTargets::point);
    SweepConfig c;
    c.targets = {TargetKind::point};
    const auto r = layer_sweep(f.bundle, f.records, f.split, c);
    EXPECT_LT(mean_distance(r, 1, ProbeKind::mlp), mean_distance(r, 1, ProbeKind::linear));
    const double lin = mean_distance(r, 0, ProbeKind::linear), mlp = mean_distance(r, 0, ProbeKind::mlp);
    EXPECT_LE(std::max(lin, mlp), 2.0 * std::min(lin, mlp));
}

TEST(LayerSweep, DeterministicAcrossRunsAndWorkers) {
    auto f = planted("sweep_det", {LayerKind::noise, LayerKind::signal, LayerKind::warped}, 0.01,
                     PlantedTargets::both);
    SweepConfig c;
    c.mlp.epochs = 10;
    const auto a = sweep_csv(layer_sweep(f.bundle, f.records, f.split, c));
    c.workers = 4;
    const auto b = sweep_csv(layer_sweep(f.bundle, f.records, f.split, c));
    c.workers = 1;
    const auto d = sweep_csv(layer_sweep(f.bundle, f.records, f.split, c));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, d);
}

TEST(LayerSweep, FailedFitsBecomeTaggedRows) {
    // Fewer train rows than features with λ = 0 is singular.
    auto f = planted("sweep_fail", {LayerKind::signal}, 0.01, PlantedTargets::point, 20);
    auto c = point_only(ProbeKind::linear);
    c.lambda.fixed = 0.0;
    const auto r = layer_sweep(f.bundle, f.records, f.split, c);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0].status, "error:SingularSystem");
    EXPECT_FALSE(r.rows[0].metric.has_value());
}

TEST(LayerSweep, RejectsMisalignedRecords) {
    auto f = planted("sweep_misaligned", {LayerKind::signal}, 0.01, PlantedTargets::point);
    f.records.pop_back();
    EXPECT_THROW(layer_sweep(f.bundle, f.records, f.split, SweepConfig{}), Error);
}

TEST(NoLeakage, CorruptingTestRowsLeavesFitsIdentical) {
    const auto records = synthesize_records(120, 3);
    const auto s = split(records, SplitSpec{});
    SyntheticSpec spec;
    spec.layers = {LayerKind::signal};
    const Matrix x = synthesize_activations(spec, records).front().matrix;
    Matrix corrupted = x;
    Rng rng(99);
    for (auto i : s.test)
        for (Eigen::Index j = 0; j < x.cols(); ++j) corrupted(static_cast<Eigen::Index>(i), j) = 1e6 * rng.normal();

    SweepConfig c;
    c.mlp.epochs = 15;
    const auto clean = fit_layer_probes(x, records, s.train, c);
    const auto dirty = fit_layer_probes(corrupted, records, s.train, c);
    ASSERT_EQ(clean.size(), 4u);
    ASSERT_EQ(dirty.size(), 4u);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        ASSERT_TRUE(clean[i].fitted && dirty[i].fitted);
        if (const auto* a = std::get_if<RidgeProbe>(&*clean[i].fitted)) {
            const auto& b = std::get<RidgeProbe>(*dirty[i].fitted);
            EXPECT_EQ(a->weights, b.weights);
            EXPECT_EQ(a->intercept, b.intercept);
            EXPECT_EQ(a->lambda, b.lambda);
        } else {
            const auto& a2 = std::get<MlpProbe>(*clean[i].fitted);
            const auto& b2 = std::get<MlpProbe>(*dirty[i].fitted);
            EXPECT_TRUE(a2.params == b2.params);
            EXPECT_EQ(a2.x_mean, b2.x_mean);
            EXPECT_EQ(a2.x_scale, b2.x_scale);
        }
    }
}

TEST(Baseline, KidneyExample) {
    const std::vector<LandmarkRecord> records{named(0, "left kidney", 0), named(1, "right kidney", 2),
                                              named(2, "sternum", 4)};
    const std::vector<std::size_t> test{0, 1, 2};
    const auto r = run_baseline(records, test);
    EXPECT_EQ(r.neighbor_ids[0], 1u);
    EXPECT_EQ(r.neighbor_ids[1], 0u);
    // "sternum" shares nothing; the tie goes to the lowest id.
    EXPECT_EQ(r.neighbor_ids[2], 0u);
    EXPECT_EQ(r.distance.per_sample[0], 2.0);
}

TEST(Baseline, DuplicateNamesPredictEachOther) {
    const std::vector<LandmarkRecord> records{named(0, "liver", 0), named(1, "liver", 0)};
    const std::vector<std::size_t> test{0, 1};
    const auto r = run_baseline(records, test);
    EXPECT_EQ(r.neighbor_ids, (std::vector<std::size_t>{1, 0}));
    EXPECT_EQ(r.distance.mean, 0.0);
    EXPECT_EQ(r.dice.mean, 1.0);
}

TEST(Baseline, MatchesAllPairsSearch) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto records = synthesize_records(50, seed);
        std::vector<std::size_t> ids(records.size());
        std::iota(ids.begin(), ids.end(), std::size_t{0});
        EXPECT_EQ(run_baseline(records, ids).neighbor_ids, oracle::brute_baseline_neighbors(records, ids));
        const auto s = split(records, SplitSpec{.seed = seed});
        EXPECT_EQ(run_baseline(records, s.test).neighbor_ids, oracle::brute_baseline_neighbors(records, s.test));
    }
}

TEST(Baseline, OnlySearchesTheGivenIds) {
    const std::vector<LandmarkRecord> records{named(0, "left kidney", 0), named(1, "right kidney", 2),
                                              named(2, "sternum", 4), named(3, "manubrium sternum", 6)};
    const std::vector<std::size_t> test{0, 2, 3};
    const auto r = run_baseline(records, test);
    EXPECT_EQ(r.neighbor_ids, (std::vector<std::size_t>{2, 3, 2}));
}

TEST(Baseline, TooFewRecords) {
    const std::vector<LandmarkRecord> records{named(0, "a", 0)};
    const std::vector<std::size_t> test{0};
    try {
        run_baseline(records, test);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooFewRecords);
    }
}

TEST(Report, FilesAndCounts) {
    auto f = planted("report", {LayerKind::noise, LayerKind::signal}, 0.01, PlantedTargets::both);
    SweepConfig c;
    c.mlp.epochs = 5;
    const auto sweep = layer_sweep(f.bundle, f.records, f.split, c);
    const auto baseline = run_baseline(f.records, f.split.test);
    const auto dir = oracle::temp_dir("report_out");
    const auto paths = emit_report(sweep, &baseline, dir);

    const auto csv = read_file(paths.sweep_csv);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), sweep_csv_header);

    const auto plot = read_file(paths.plot_csv);
    EXPECT_EQ(plot.substr(0, plot.find('\n')), plot_csv_header);
    EXPECT_EQ(std::count(plot.begin(), plot.end(), '\n'), 5);  // header + 2 series × 2 layers

    const auto j = nlohmann::json::parse(read_file(paths.summary_json));
    EXPECT_EQ(j["toolkit_version"], std::string(version));
    EXPECT_EQ(j["row_count"], 8);
    EXPECT_EQ(j["at_20_percent_depth"].size(), 4u);
    for (const auto& e : j["at_20_percent_depth"]) EXPECT_EQ(e["layer"], 0);
    EXPECT_EQ(j["baseline"]["test_count"], f.split.test.size());
    EXPECT_TRUE(j["seeds"].contains("mlp"));
}

TEST(Report, CsvRoundTripsAtFullPrecision) {
    SweepResult s;
    s.model_tag = "tag, \"quoted\"";
    s.num_layers = 3;
    Rng rng(5);
    for (std::size_t layer = 0; layer < 3; ++layer) {
        SweepRow r;
        r.model_tag = s.model_tag;
        r.layer = layer;
        r.depth_fraction = depth_fraction(layer, 3);
        r.target = layer == 1 ? TargetKind::box : TargetKind::point;
        r.metric = MetricSummary{r.metric_kind(), rng.uniform() / 3.0, rng.normal() * 1e-7, {}};
        r.lambda = std::pow(10.0, rng.uniform(-3, 5));
        s.rows.push_back(r);
    }
    s.rows.back().metric.reset();
    s.rows.back().status = "error:SingularSystem";

    const auto back = parse_sweep_csv(sweep_csv(s));
    ASSERT_EQ(back.rows.size(), s.rows.size());
    EXPECT_EQ(back.model_tag, s.model_tag);
    EXPECT_EQ(back.num_layers, 3u);
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
        EXPECT_EQ(back.rows[i].depth_fraction, s.rows[i].depth_fraction);
        EXPECT_EQ(back.rows[i].lambda, s.rows[i].lambda);
        EXPECT_EQ(back.rows[i].status, s.rows[i].status);
        EXPECT_EQ(back.rows[i].metric.has_value(), s.rows[i].metric.has_value());
        if (s.rows[i].metric) {
            EXPECT_EQ(back.rows[i].metric->mean, s.rows[i].metric->mean);
            EXPECT_EQ(back.rows[i].metric->std, s.rows[i].metric->std);
            EXPECT_EQ(back.rows[i].metric->kind, s.rows[i].metric->kind);
        }
    }
    EXPECT_EQ(sweep_csv(back), sweep_csv(s));
}

TEST(Report, RejectsEmptySweepAndBadCsv) {
    EXPECT_THROW(emit_report(SweepResult{}, nullptr, oracle::temp_dir("report_empty")), Error);
    EXPECT_THROW(parse_sweep_csv("nope\n"), Error);
    EXPECT_THROW(parse_sweep_csv(""), Error);
}

TEST(Synthetic, DeterministicAndSeedSensitive) {
    const auto records = synthesize_records(30, 1);
    EXPECT_EQ(records, synthesize_records(30, 1));
    SyntheticSpec spec;
    spec.variants = {Variant::empty, Variant::random};
    const auto a = synthesize_activations(spec, records);
    const auto b = synthesize_activations(spec, records);
    ASSERT_EQ(a.size(), 4u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].matrix, b[i].matrix);
    EXPECT_NE(a[1].matrix, a[3].matrix);  // variants draw different noise
    spec.seed = 1;
    EXPECT_NE(synthesize_activations(spec, records)[1].matrix, a[1].matrix);
    for (const auto& r : records) {
        EXPECT_TRUE(r.box.contains(r.point));
        EXPECT_TRUE(r.box.is_valid());
    }
}

TEST(Synthetic, RejectsBadSpecs) {
    const auto records = synthesize_records(10, 1);
    SyntheticSpec spec;
    spec.noise_sigma = -1;
    EXPECT_THROW(synthesize_activations(spec, records), Error);
    spec = {};
    spec.planted_map = Matrix::Zero(3, 3);
    EXPECT_THROW(synthesize_activations(spec, records), Error);
    spec = {};
    spec.layers.clear();
    EXPECT_THROW(synthesize_activations(spec, records), Error);
}
