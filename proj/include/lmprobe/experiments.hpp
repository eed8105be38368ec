#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "error.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "mlp.hpp"
#include "probe_io.hpp"
#include "ridge.hpp"
#include "targets.hpp"
#include "tensor_store.hpp"
#include "version.hpp"

namespace lmprobe {

enum class ProbeKind { linear, mlp };

inline constexpr std::array<ProbeKind, 2> all_probe_kinds{ProbeKind::linear, ProbeKind::mlp};

constexpr std::string_view probe_name(ProbeKind k) noexcept { return k == ProbeKind::linear ? "linear" : "mlp"; }

inline std::optional<ProbeKind> parse_probe_kind(std::string_view s) {
    if (s == "linear") return ProbeKind::linear;
    if (s == "mlp") return ProbeKind::mlp;
    return std::nullopt;
}

/// Either a pinned lambda or k-fold selection over a grid.
struct LambdaPolicy {
    std::optional<double> fixed;
    std::vector<double> grid = default_lambda_grid();
    std::size_t folds = 5;
};

struct SweepConfig {
    std::vector<Variant> variants;  // empty: every variant in the bundle
    std::vector<ProbeKind> probes{all_probe_kinds.begin(), all_probe_kinds.end()};
    std::vector<TargetKind> targets{all_target_kinds.begin(), all_target_kinds.end()};
    LambdaPolicy lambda;
    RidgeOptions ridge;
    MlpConfig mlp;
    std::uint64_t mlp_seed = 0;
    std::size_t workers = 1;
};

struct SweepRow {
    std::string model_tag;
    Variant variant = Variant::empty;
    std::size_t layer = 0;
    double depth_fraction = 0.0;
    ProbeKind probe = ProbeKind::linear;
    TargetKind target = TargetKind::point;
    /// distance for point targets, dice for box targets; absent when the row failed
    std::optional<MetricSummary> metric;
    std::optional<double> lambda;
    std::optional<std::uint64_t> seed;
    std::string status = "ok";

    MetricKind metric_kind() const noexcept {
        return target == TargetKind::point ? MetricKind::distance : MetricKind::dice;
    }
    bool ok() const noexcept { return status == "ok"; }
};

struct SweepResult {
    std::string model_tag;
    std::size_t num_layers = 0;
    std::string coordinate_system;
    std::map<std::string, std::uint64_t> seeds;  // every seed that shaped the result
    double train_fraction = 0.7;
    std::vector<SweepRow> rows;
};

/// (layer + 1) / num_layers, so the last layer sits at depth 1.
inline double depth_fraction(std::size_t layer, std::size_t num_layers) {
    return static_cast<double>(layer + 1) / static_cast<double>(num_layers);
}

/// Layer whose depth is nearest `target`; ties go to the shallower layer.
inline std::size_t layer_at_depth(std::size_t num_layers, double target = 0.2) {
    if (num_layers == 0) throw Error(ErrorKind::EmptyInput, "no layers");
    std::size_t best = 0;
    double best_gap = std::abs(depth_fraction(0, num_layers) - target);
    for (std::size_t l = 1; l < num_layers; ++l) {
        const double gap = std::abs(depth_fraction(l, num_layers) - target);
        if (gap < best_gap - 1e-12) {
            best = l;
            best_gap = gap;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Per-layer fitting and evaluation
// ---------------------------------------------------------------------------

struct ProbeFit {
    ProbeKind probe = ProbeKind::linear;
    TargetKind target = TargetKind::point;
    std::optional<AnyProbe> fitted;
    std::optional<double> lambda;
    std::optional<std::uint64_t> seed;
    std::string status = "ok";
    std::optional<ErrorKind> error;
};

inline std::string error_status(const Error& e) { return "error:" + std::string(kind_name(e.kind())); }

inline RidgeProbe fit_linear_probe(const Matrix& x_train, const Matrix& y_train, TargetKind target,
                                   const SweepConfig& config) {
    const double lambda =
        config.lambda.fixed ? *config.lambda.fixed
                            : select_lambda(x_train, y_train, config.lambda.grid, config.lambda.folds, target, config.ridge);
    return fit_ridge(x_train, y_train, lambda, target, config.ridge);
}

/// Fits every configured (probe, target) pair using only the `train_ids` rows
/// of `x_full`. Failures are captured per pair.
inline std::vector<ProbeFit> fit_layer_probes(const Matrix& x_full, std::span<const LandmarkRecord> records,
                                              std::span<const std::size_t> train_ids, const SweepConfig& config) {
    if (static_cast<std::size_t>(x_full.rows()) != records.size()) {
        throw Error(ErrorKind::RowCountMismatch, "activation rows do not match record count");
    }
    const Matrix x_train = select_rows(x_full, train_ids);
    std::vector<ProbeFit> fits;
    for (auto probe : config.probes) {
        for (auto target : config.targets) {
            ProbeFit fit;
            fit.probe = probe;
            fit.target = target;
            try {
                const Matrix y_train = select_rows(target_matrix(records, target), train_ids);
                if (probe == ProbeKind::linear) {
                    auto ridge = fit_linear_probe(x_train, y_train, target, config);
                    fit.lambda = ridge.lambda;
                    fit.fitted = std::move(ridge);
                } else {
                    fit.seed = config.mlp_seed;
                    fit.fitted = fit_mlp(x_train, y_train, target, config.mlp, config.mlp_seed);
                }
            } catch (const Error& e) {
                fit.status = error_status(e);
                fit.error = e.kind();
            }
            fits.push_back(std::move(fit));
        }
    }
    return fits;
}

inline Matrix predict_any(const AnyProbe& probe, const Matrix& x) {
    return std::visit(
        [&x](const auto& p) -> Matrix {
            if constexpr (std::is_same_v<std::decay_t<decltype(p)>, RidgeProbe>) {
                return predict_ridge(p, x);
            } else {
                return predict_mlp(p, x);
            }
        },
        probe);
}

/// Per-sample distances (point targets) or DICE scores (box targets).
inline std::vector<double> score_predictions(const Matrix& predicted, std::span<const LandmarkRecord> records,
                                             std::span<const std::size_t> ids, TargetKind target) {
    std::vector<double> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = predicted.row(static_cast<Eigen::Index>(i));
        const auto& truth = records[ids[i]];
        if (!row.allFinite()) throw Error(ErrorKind::NonFiniteValue, "prediction is not finite");
        out.push_back(target == TargetKind::point ? euclidean(point_from_row(row), truth.point)
                                                  : dice(box_from_row(row), truth.box));
    }
    return out;
}

inline std::vector<SweepRow> evaluate_layer(const ActivationDataset& ds, std::size_t num_layers,
                                            std::span<const LandmarkRecord> records, const Split& split,
                                            const SweepConfig& config) {
    const auto fits = fit_layer_probes(ds.matrix, records, split.train, config);
    const Matrix x_test = select_rows(ds.matrix, split.test);
    std::vector<SweepRow> rows;
    for (const auto& fit : fits) {
        SweepRow row;
        row.model_tag = ds.model_tag;
        row.variant = ds.variant;
        row.layer = ds.layer;
        row.depth_fraction = depth_fraction(ds.layer, num_layers);
        row.probe = fit.probe;
        row.target = fit.target;
        row.lambda = fit.lambda;
        row.seed = fit.seed;
        row.status = fit.status;
        if (fit.fitted) {
            try {
                const auto scores = score_predictions(predict_any(*fit.fitted, x_test), records, split.test, fit.target);
                row.metric = summarize(scores, row.metric_kind());
            } catch (const Error& e) {
                row.status = error_status(e);
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace detail {

inline auto row_key(const SweepRow& r) {
    return std::make_tuple(static_cast<int>(r.variant), r.layer, static_cast<int>(r.probe), static_cast<int>(r.target));
}

/// Runs `task(i)` for i in [0, count) on `workers` threads.
template <typename Task>
void parallel_for(std::size_t count, std::size_t workers, Task&& task) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) task(i);
        });
    }
}

}  // namespace detail

/// Fits and evaluates every (variant, layer, probe, target) combination.
/// Rows come back sorted by (variant, layer, probe, target) whatever the worker count.
inline SweepResult layer_sweep(const ActivationBundle& bundle, std::span<const LandmarkRecord> records,
                               const Split& split, const SweepConfig& config) {
    if (bundle.row_count != records.size()) {
        throw Error(ErrorKind::RowCountMismatch, "bundle rows do not match record count");
    }
    std::vector<Variant> variants = config.variants;
    if (variants.empty()) variants.assign(bundle.variants.begin(), bundle.variants.end());
    for (auto v : variants) {
        if (!bundle.variants.contains(v)) {
            throw Error(ErrorKind::MissingLayer, "bundle has no variant '" + std::string(variant_name(v)) + "'");
        }
    }
    std::sort(variants.begin(), variants.end());
    variants.erase(std::unique(variants.begin(), variants.end()), variants.end());

    std::vector<std::pair<Variant, std::size_t>> tasks;
    for (auto v : variants)
        for (std::size_t l = 0; l < bundle.num_layers; ++l) tasks.emplace_back(v, l);

    std::vector<std::vector<SweepRow>> slots(tasks.size());
    detail::parallel_for(tasks.size(), config.workers, [&](std::size_t i) {
        const auto [variant, layer] = tasks[i];
        try {
            const auto ds = load_dataset(bundle, variant, layer);
            slots[i] = evaluate_layer(ds, bundle.num_layers, records, split, config);
        } catch (const Error& e) {
            for (auto probe : config.probes) {
                for (auto target : config.targets) {
                    SweepRow row;
                    row.model_tag = bundle.model_tag;
                    row.variant = variant;
                    row.layer = layer;
                    row.depth_fraction = depth_fraction(layer, bundle.num_layers);
                    row.probe = probe;
                    row.target = target;
                    row.status = error_status(e);
                    slots[i].push_back(std::move(row));
                }
            }
        }
    });

    SweepResult result;
    result.model_tag = bundle.model_tag;
    result.num_layers = bundle.num_layers;
    result.seeds["mlp"] = config.mlp_seed;
    for (auto& slot : slots)
        for (auto& row : slot) result.rows.push_back(std::move(row));
    std::stable_sort(result.rows.begin(), result.rows.end(),
                     [](const SweepRow& a, const SweepRow& b) { return detail::row_key(a) < detail::row_key(b); });
    return result;
}

// ---------------------------------------------------------------------------
// Lexical baseline
// ---------------------------------------------------------------------------

struct BaselineResult {
    std::vector<std::size_t> query_ids;     // test ids, ascending
    std::vector<std::size_t> neighbor_ids;  // chosen neighbor per query
    MetricSummary distance;
    MetricSummary dice;
};

/// For each test landmark, borrows the coordinates of the other test landmark
/// whose name has the highest token Jaccard similarity (ties: lowest id).
inline BaselineResult run_baseline(std::span<const LandmarkRecord> records, std::span<const std::size_t> test_ids) {
    if (test_ids.size() < 2) throw Error(ErrorKind::TooFewRecords, "baseline needs at least 2 test records");
    std::vector<std::size_t> ids(test_ids.begin(), test_ids.end());
    std::sort(ids.begin(), ids.end());
    for (auto id : ids) {
        if (id >= records.size()) throw Error(ErrorKind::DimensionMismatch, "test id out of range");
    }
    std::vector<TokenSet> tokens;
    tokens.reserve(ids.size());
    for (auto id : ids) tokens.push_back(tokenize(records[id].name));

    BaselineResult out;
    out.query_ids = ids;
    std::vector<double> distances, dices;
    for (std::size_t q = 0; q < ids.size(); ++q) {
        std::size_t best = ids.size();
        double best_score = -1.0;
        for (std::size_t c = 0; c < ids.size(); ++c) {
            if (c == q) continue;
            const double score = jaccard(tokens[q], tokens[c]);
            if (score > best_score) {
                best = c;
                best_score = score;
            }
        }
        const auto& query = records[ids[q]];
        const auto& neighbor = records[ids[best]];
        out.neighbor_ids.push_back(neighbor.id);
        distances.push_back(euclidean(neighbor.point, query.point));
        dices.push_back(dice(neighbor.box, query.box));
    }
    out.distance = summarize(distances, MetricKind::distance);
    out.dice = summarize(dices, MetricKind::dice);
    return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline constexpr std::string_view sweep_csv_header =
    "model_tag,variant,layer,depth_fraction,probe,target,metric,mean,std,lambda,seed,status";
inline constexpr std::string_view plot_csv_header = "series_label,depth_fraction,mean_distance";

/// Shortest form is not used; every real gets 17 significant digits.
inline std::string format_real(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
    if (ec != std::errc{}) throw Error(ErrorKind::IoFailure, "number formatting failed");
    return std::string(buf.data(), end);
}

inline std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string sweep_csv(const SweepResult& sweep) {
    std::string out(sweep_csv_header);
    out.push_back('\n');
    for (const auto& r : sweep.rows) {
        out += csv_field(r.model_tag) + ',' + std::string(variant_name(r.variant)) + ',' + std::to_string(r.layer) +
               ',' + format_real(r.depth_fraction) + ',' + std::string(probe_name(r.probe)) + ',' +
               std::string(target_name(r.target)) + ',' + std::string(metric_name(r.metric_kind())) + ',' +
               (r.metric ? format_real(r.metric->mean) : "") + ',' + (r.metric ? format_real(r.metric->std) : "") +
               ',' + (r.lambda ? format_real(*r.lambda) : "") + ',' + (r.seed ? std::to_string(*r.seed) : "") + ',' +
               csv_field(r.status) + '\n';
    }
    return out;
}

inline std::string series_label(const SweepRow& r) {
    return std::string(variant_name(r.variant)) + "/" + std::string(probe_name(r.probe));
}

/// Depth vs mean distance per (variant, probe) series, point targets only.
inline std::string plot_csv(const SweepResult& sweep) {
    std::vector<std::tuple<std::string, double, double>> points;
    for (const auto& r : sweep.rows) {
        if (r.target != TargetKind::point || !r.metric) continue;
        points.emplace_back(series_label(r), r.depth_fraction, r.metric->mean);
    }
    std::stable_sort(points.begin(), points.end(), [](const auto& a, const auto& b) {
        return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    std::string out(plot_csv_header);
    out.push_back('\n');
    for (const auto& [label, depth, mean] : points) {
        out += csv_field(label) + ',' + format_real(depth) + ',' + format_real(mean) + '\n';
    }
    return out;
}

inline nlohmann::json summary_entry(const MetricSummary& s) {
    return {{"metric", metric_name(s.kind)}, {"mean", s.mean}, {"std", s.std}, {"count", s.per_sample.size()}};
}

inline nlohmann::json summary_json(const SweepResult& sweep, const BaselineResult* baseline) {
    nlohmann::json j;
    j["toolkit_version"] = std::string(version);
    j["model_tag"] = sweep.model_tag;
    j["num_layers"] = sweep.num_layers;
    j["coordinate_system"] = sweep.coordinate_system;
    j["train_fraction"] = sweep.train_fraction;
    j["seeds"] = sweep.seeds;
    j["std_convention"] = "population";
    j["depth_rule"] = "depth_fraction = (layer + 1) / num_layers; reference row minimizes |depth - 0.2|, ties to the shallower layer";
    j["row_count"] = sweep.rows.size();
    j["failed_rows"] = std::count_if(sweep.rows.begin(), sweep.rows.end(), [](const SweepRow& r) { return !r.ok(); });

    auto& at = j["at_20_percent_depth"] = nlohmann::json::array();
    if (sweep.num_layers > 0) {
        const auto layer = layer_at_depth(sweep.num_layers, 0.2);
        for (const auto& r : sweep.rows) {
            if (r.layer != layer) continue;
            nlohmann::json e{{"variant", variant_name(r.variant)},
                             {"probe", probe_name(r.probe)},
                             {"target", target_name(r.target)},
                             {"layer", r.layer},
                             {"depth_fraction", r.depth_fraction},
                             {"metric", metric_name(r.metric_kind())},
                             {"status", r.status}};
            if (r.metric) {
                e["mean"] = r.metric->mean;
                e["std"] = r.metric->std;
            }
            if (r.lambda) e["lambda"] = *r.lambda;
            if (r.seed) e["seed"] = *r.seed;
            at.push_back(std::move(e));
        }
    }
    if (baseline) {
        j["baseline"] = {{"distance", summary_entry(baseline->distance)},
                         {"dice", summary_entry(baseline->dice)},
                         {"test_count", baseline->query_ids.size()}};
    }
    return j;
}

struct ReportPaths {
    std::filesystem::path sweep_csv;
    std::filesystem::path summary_json;
    std::filesystem::path plot_csv;
};

/// Writes sweep.csv, summary.json and plot_data.csv into `dir`.
inline ReportPaths emit_report(const SweepResult& sweep, const BaselineResult* baseline,
                               const std::filesystem::path& dir) {
    if (sweep.rows.empty()) throw Error(ErrorKind::EmptyInput, "sweep has no rows");
    ReportPaths p{dir / "sweep.csv", dir / "summary.json", dir / "plot_data.csv"};
    write_file_atomic(p.sweep_csv, sweep_csv(sweep));
    write_file_atomic(p.summary_json, summary_json(sweep, baseline).dump(2) + "\n");
    write_file_atomic(p.plot_csv, plot_csv(sweep));
    return p;
}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back().push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back().push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back().push_back(c);
        }
    }
    return fields;
}

inline double parse_real(const std::string& s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw Error(ErrorKind::MalformedReport, "bad number '" + s + "'");
    return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw Error(ErrorKind::MalformedReport, "bad integer '" + s + "'");
    return v;
}

}  // namespace detail

/// Parses a sweep CSV written by `sweep_csv`. Per-sample values are not
/// stored in the CSV, so summaries come back with empty `per_sample`.
inline SweepResult parse_sweep_csv(std::string_view text) {
    SweepResult out;
    std::size_t pos = 0;
    bool header = true;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (header) {
            if (line != sweep_csv_header) throw Error(ErrorKind::MalformedReport, "unexpected sweep CSV header");
            header = false;
            continue;
        }
        const auto f = detail::split_csv_line(line);
        if (f.size() != 12) throw Error(ErrorKind::MalformedReport, "sweep CSV row needs 12 fields");
        SweepRow r;
        r.model_tag = f[0];
        const auto variant = parse_variant(f[1]);
        const auto probe = parse_probe_kind(f[4]);
        const auto target = parse_target_kind(f[5]);
        if (!variant || !probe || !target) throw Error(ErrorKind::MalformedReport, "unknown variant, probe or target");
        r.variant = *variant;
        r.layer = static_cast<std::size_t>(detail::parse_uint(f[2]));
        r.depth_fraction = detail::parse_real(f[3]);
        r.probe = *probe;
        r.target = *target;
        if (!f[7].empty()) {
            MetricSummary s;
            s.kind = r.metric_kind();
            s.mean = detail::parse_real(f[7]);
            s.std = detail::parse_real(f[8]);
            r.metric = s;
        }
        if (!f[9].empty()) r.lambda = detail::parse_real(f[9]);
        if (!f[10].empty()) r.seed = detail::parse_uint(f[10]);
        r.status = f[11];
        if (out.rows.empty()) {
            out.model_tag = r.model_tag;
            out.num_layers = static_cast<std::size_t>(std::llround(static_cast<double>(r.layer + 1) / r.depth_fraction));
        }
        out.rows.push_back(std::move(r));
    }
    if (header) throw Error(ErrorKind::MalformedReport, "empty sweep CSV");
    return out;
}

}  // namespace lmprobe
