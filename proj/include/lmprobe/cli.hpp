#pragma once

// Command-line front end. Kept out of lmprobe.hpp so library users do not
// pull in CLI11.

#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmprobe.hpp"

namespace lmprobe::cli {

/// Every parameter that can shape a result. Serialized verbatim as the
/// config echo; feeding an echo back through --config reproduces the run.
struct RunConfig {
    std::string manifest;
    std::string bundle;
    std::string out;
    SplitSpec split;
    std::optional<double> lambda;
    std::vector<double> lambda_grid = default_lambda_grid();
    std::size_t folds = 5;
    bool standardize = false;
    MlpConfig mlp;
    std::uint64_t mlp_seed = 0;
    std::vector<std::string> variants;  // empty: all variants present
    std::vector<std::string> probes{"linear", "mlp"};
    std::vector<std::string> targets{"point", "box"};
    // Execution only; never changes results, so it is not echoed.
    std::size_t workers = 1;

    struct Synth {
        std::size_t n = 117;
        std::uint64_t records_seed = 7;
        std::size_t hidden_size = 64;
        double noise_sigma = 0.01;
        std::vector<std::string> layers{"noise", "signal", "signal", "warped", "signal"};
        std::vector<std::string> variants{"empty", "prompt", "random"};
        std::string planted = "both";
        std::uint64_t seed = 0;
        std::string model_tag = "synthetic";
    } synth;

    struct Fit {
        std::size_t layer = 0;
        std::string variant = "empty";
    } fit;
};

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j;
    j["manifest"] = c.manifest;
    j["bundle"] = c.bundle;
    j["out"] = c.out;
    j["split"] = {{"seed", c.split.seed}, {"train_fraction", c.split.train_fraction}};
    j["lambda"] = c.lambda ? nlohmann::json(*c.lambda) : nlohmann::json(nullptr);
    j["lambda_grid"] = c.lambda_grid;
    j["folds"] = c.folds;
    j["standardize"] = c.standardize;
    j["mlp"] = lmprobe::detail::mlp_config_json(c.mlp);
    j["mlp"]["seed"] = c.mlp_seed;
    j["variants"] = c.variants;
    j["probes"] = c.probes;
    j["targets"] = c.targets;
    j["synth"] = {{"n", c.synth.n},
                  {"records_seed", c.synth.records_seed},
                  {"hidden_size", c.synth.hidden_size},
                  {"noise_sigma", c.synth.noise_sigma},
                  {"layers", c.synth.layers},
                  {"variants", c.synth.variants},
                  {"planted", c.synth.planted},
                  {"seed", c.synth.seed},
                  {"model_tag", c.synth.model_tag}};
    j["fit"] = {{"layer", c.fit.layer}, {"variant", c.fit.variant}};
    return j;
}

inline RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
        c.manifest = j.value("manifest", c.manifest);
        c.bundle = j.value("bundle", c.bundle);
        c.out = j.value("out", c.out);
        if (j.contains("split")) {
            c.split.seed = j["split"].value("seed", c.split.seed);
            c.split.train_fraction = j["split"].value("train_fraction", c.split.train_fraction);
        }
        if (j.contains("lambda") && !j["lambda"].is_null()) c.lambda = j["lambda"].get<double>();
        c.lambda_grid = j.value("lambda_grid", c.lambda_grid);
        c.folds = j.value("folds", c.folds);
        c.standardize = j.value("standardize", c.standardize);
        if (j.contains("mlp")) {
            c.mlp = lmprobe::detail::mlp_config_from_json(j["mlp"]);
            c.mlp_seed = j["mlp"].value("seed", c.mlp_seed);
        }
        c.variants = j.value("variants", c.variants);
        c.probes = j.value("probes", c.probes);
        c.targets = j.value("targets", c.targets);
        if (j.contains("synth")) {
            const auto& s = j["synth"];
            c.synth.n = s.value("n", c.synth.n);
            c.synth.records_seed = s.value("records_seed", c.synth.records_seed);
            c.synth.hidden_size = s.value("hidden_size", c.synth.hidden_size);
            c.synth.noise_sigma = s.value("noise_sigma", c.synth.noise_sigma);
            c.synth.layers = s.value("layers", c.synth.layers);
            c.synth.variants = s.value("variants", c.synth.variants);
            c.synth.planted = s.value("planted", c.synth.planted);
            c.synth.seed = s.value("seed", c.synth.seed);
            c.synth.model_tag = s.value("model_tag", c.synth.model_tag);
        }
        if (j.contains("fit")) {
            c.fit.layer = j["fit"].value("layer", c.fit.layer);
            c.fit.variant = j["fit"].value("variant", c.fit.variant);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
    }
    return c;
}

/// Bad invocation: reported with the synopsis and exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T, typename Parse>
std::vector<T> parse_names(const std::vector<std::string>& names, Parse parse, const char* what) {
    std::vector<T> out;
    for (const auto& s : names) {
        const auto v = parse(s);
        if (!v) throw UsageError(std::string("unknown ") + what + " '" + s + "'");
        out.push_back(*v);
    }
    return out;
}

inline void require(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

inline void write_echo(const RunConfig& c, const std::string& command) {
    auto j = to_json(c);
    j["command"] = command;
    j["toolkit_version"] = std::string(version);
    write_file_atomic(std::filesystem::path(c.out) / "config_echo.json", j.dump(2) + "\n");
}

inline SweepConfig sweep_config(const RunConfig& c) {
    SweepConfig s;
    s.variants = parse_names<Variant>(c.variants, parse_variant, "variant");
    s.probes = parse_names<ProbeKind>(c.probes, parse_probe_kind, "probe");
    s.targets = parse_names<TargetKind>(c.targets, parse_target_kind, "target");
    s.lambda.fixed = c.lambda;
    s.lambda.grid = c.lambda_grid;
    s.lambda.folds = c.folds;
    s.ridge.standardize = c.standardize;
    s.mlp = c.mlp;
    s.mlp_seed = c.mlp_seed;
    s.workers = c.workers;
    return s;
}

inline nlohmann::json baseline_json(const BaselineResult& b, std::span<const LandmarkRecord> records) {
    nlohmann::json j;
    j["distance"] = summary_entry(b.distance);
    j["dice"] = summary_entry(b.dice);
    j["std_convention"] = "population";
    auto& pairs = j["neighbors"] = nlohmann::json::array();
    for (std::size_t i = 0; i < b.query_ids.size(); ++i) {
        pairs.push_back({{"query_id", b.query_ids[i]},
                         {"query", records[b.query_ids[i]].name},
                         {"neighbor_id", b.neighbor_ids[i]},
                         {"neighbor", records[b.neighbor_ids[i]].name},
                         {"distance", b.distance.per_sample[i]},
                         {"dice", b.dice.per_sample[i]}});
    }
    return j;
}

inline BaselineResult baseline_from_json(const nlohmann::json& j) {
    BaselineResult b;
    const auto read = [](const nlohmann::json& e, MetricKind kind) {
        MetricSummary s;
        s.kind = kind;
        s.mean = e.at("mean").get<double>();
        s.std = e.at("std").get<double>();
        return s;
    };
    try {
        b.distance = read(j.at("distance"), MetricKind::distance);
        b.dice = read(j.at("dice"), MetricKind::dice);
        for (const auto& p : j.value("neighbors", nlohmann::json::array())) {
            b.query_ids.push_back(p.at("query_id").get<std::size_t>());
            b.neighbor_ids.push_back(p.at("neighbor_id").get<std::size_t>());
            b.distance.per_sample.push_back(p.at("distance").get<double>());
            b.dice.per_sample.push_back(p.at("dice").get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedReport, std::string("baseline JSON: ") + e.what());
    }
    return b;
}

// --- subcommands -----------------------------------------------------------

inline int cmd_validate(const RunConfig& c, std::ostream& out) {
    require(c.manifest, "--manifest");
    const auto manifest = load_manifest(c.manifest);
    out << "OK: " << manifest.records.size() << " landmarks";
    if (!manifest.coordinate_system.empty()) out << " (coordinate system: " << manifest.coordinate_system << ")";
    out << "\n";
    for (const auto& w : manifest.warnings) out << "warning: " << w << "\n";
    if (!c.bundle.empty()) {
        const auto bundle = load_bundle(c.bundle, manifest);
        out << "OK: bundle '" << bundle.model_tag << "' with " << bundle.num_layers << " layers x "
            << bundle.variants.size() << " variants, " << bundle.row_count << " x " << bundle.hidden_size << "\n";
        for (const auto& w : bundle.warnings) out << "warning: " << w << "\n";
    }
    if (!c.out.empty()) write_echo(c, "validate");
    return 0;
}

inline int cmd_synth(RunConfig c, std::ostream& out) {
    require(c.out, "--out");
    const std::filesystem::path dir(c.out);
    std::vector<LandmarkRecord> records;
    std::string sha;
    if (c.manifest.empty()) {
        records = synthesize_records(c.synth.n, c.synth.records_seed);
        const auto path = dir / "manifest.json";
        sha = save_manifest(path, "synthetic unit cube (dimensionless)", records);
        c.manifest = path.string();
    } else {
        auto manifest = load_manifest(c.manifest);
        records = std::move(manifest.records);
        sha = manifest.sha256;
    }
    SyntheticSpec spec;
    spec.hidden_size = c.synth.hidden_size;
    spec.noise_sigma = c.synth.noise_sigma;
    spec.layers = parse_names<LayerKind>(c.synth.layers, parse_layer_kind, "layer kind");
    spec.variants = parse_names<Variant>(c.synth.variants, parse_variant, "variant");
    const auto planted = parse_planted(c.synth.planted);
    if (!planted) throw UsageError("unknown planted target set '" + c.synth.planted + "'");
    spec.planted = *planted;
    spec.seed = c.synth.seed;
    spec.model_tag = c.synth.model_tag;
    const auto bundle = generate_synthetic(spec, records, dir, sha);
    if (c.bundle.empty()) c.bundle = dir.string();
    write_echo(c, "synth");
    out << "wrote " << bundle.num_layers << " layers x " << bundle.variants.size() << " variants ("
        << bundle.row_count << " x " << bundle.hidden_size << ") to " << dir.string() << "\n";
    return 0;
}

inline int cmd_baseline(const RunConfig& c, std::ostream& out) {
    require(c.manifest, "--manifest");
    require(c.out, "--out");
    const auto manifest = load_manifest(c.manifest);
    const auto sp = split(manifest.records, c.split);
    const auto b = run_baseline(manifest.records, sp.test);
    write_file_atomic(std::filesystem::path(c.out) / "baseline.json",
                      baseline_json(b, manifest.records).dump(2) + "\n");
    write_echo(c, "baseline");
    out << "baseline distance " << format_real(b.distance.mean) << " +/- " << format_real(b.distance.std)
        << ", dice " << format_real(b.dice.mean) << " +/- " << format_real(b.dice.std) << "\n";
    return 0;
}

inline int cmd_sweep(const RunConfig& c, std::ostream& out) {
    require(c.manifest, "--manifest");
    require(c.bundle, "--bundle");
    require(c.out, "--out");
    const auto manifest = load_manifest(c.manifest);
    const auto bundle = load_bundle(c.bundle, manifest);
    const auto sp = split(manifest.records, c.split);
    auto sweep = layer_sweep(bundle, manifest.records, sp, sweep_config(c));
    sweep.coordinate_system = manifest.coordinate_system;
    sweep.train_fraction = c.split.train_fraction;
    sweep.seeds["split"] = c.split.seed;
    const auto base = run_baseline(manifest.records, sp.test);
    const std::filesystem::path dir(c.out);
    emit_report(sweep, &base, dir);
    write_file_atomic(dir / "baseline.json", baseline_json(base, manifest.records).dump(2) + "\n");
    write_echo(c, "sweep");
    const auto failed = std::count_if(sweep.rows.begin(), sweep.rows.end(), [](const SweepRow& r) { return !r.ok(); });
    out << "sweep: " << sweep.rows.size() << " rows (" << failed << " failed) written to " << dir.string() << "\n";
    return 0;
}

inline int cmd_fit(const RunConfig& c, std::ostream& out) {
    require(c.manifest, "--manifest");
    require(c.bundle, "--bundle");
    require(c.out, "--out");
    const auto manifest = load_manifest(c.manifest);
    const auto bundle = load_bundle(c.bundle, manifest);
    const auto variant = parse_variant(c.fit.variant);
    if (!variant) throw UsageError("unknown variant '" + c.fit.variant + "'");
    const auto ds = load_dataset(bundle, *variant, c.fit.layer);
    const auto sp = split(manifest.records, c.split);
    const auto config = sweep_config(c);
    const auto fits = fit_layer_probes(ds.matrix, manifest.records, sp.train, config);
    const Matrix x_test = select_rows(ds.matrix, sp.test);
    const std::filesystem::path dir(c.out);
    nlohmann::json metrics = nlohmann::json::array();
    for (const auto& f : fits) {
        const auto stem = std::string(probe_name(f.probe)) + "_" + std::string(target_name(f.target));
        nlohmann::json e{{"probe", probe_name(f.probe)}, {"target", target_name(f.target)}, {"status", f.status}};
        if (!f.fitted) throw Error(f.error.value_or(ErrorKind::InvalidConfig), stem + " fit failed");
        std::visit([&](const auto& p) { save_probe(dir / (stem + ".json"), p); }, *f.fitted);
        const auto scores = score_predictions(predict_any(*f.fitted, x_test), manifest.records, sp.test, f.target);
        const auto s = summarize(scores, f.target == TargetKind::point ? MetricKind::distance : MetricKind::dice);
        e["test"] = summary_entry(s);
        out << stem << ": test " << metric_name(s.kind) << " " << format_real(s.mean) << " +/- " << format_real(s.std)
            << "\n";
        metrics.push_back(std::move(e));
    }
    write_file_atomic(dir / "fit_metrics.json", metrics.dump(2) + "\n");
    write_echo(c, "fit");
    return 0;
}

inline int cmd_report(const std::string& in, const std::string& baseline_path, const std::string& out_dir,
                      std::ostream& out) {
    require(in, "--in");
    require(out_dir, "--out");
    const auto sweep = parse_sweep_csv(read_file(in));
    std::optional<BaselineResult> base;
    if (!baseline_path.empty()) {
        try {
            base = baseline_from_json(nlohmann::json::parse(read_file(baseline_path)));
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorKind::MalformedReport, e.what());
        }
    }
    emit_report(sweep, base ? &*base : nullptr, out_dir);
    out << "report: " << sweep.rows.size() << " rows written to " << out_dir << "\n";
    return 0;
}

}  // namespace detail

/// Entry point; returns the process exit code (0 ok, 1 data error, 2 usage error).
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Probe language-model activations for anatomical landmark positions", "lmprobe"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(version));

    // Flag values land here and override the --config file only when given.
    std::string config_path, manifest, bundle, out_dir, variants_csv, probes_csv, targets_csv, grid_csv;
    std::uint64_t seed = 0, mlp_seed = 0, synth_seed = 0, records_seed = 0;
    double lambda = 0.0, noise = 0.0;
    std::size_t folds = 0, workers = 0, epochs = 0, n = 0, hidden = 0, layer = 0;
    std::string layer_kinds, planted, model_tag, variant, in_csv, baseline_path;
    bool standardize = false;

    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> overrides;
    const auto common = [&](CLI::App* sub) {
        overrides.emplace_back(sub->add_option("--manifest", manifest, "Landmark manifest (JSON)"),
                               [&](RunConfig& c) { c.manifest = manifest; });
        overrides.emplace_back(sub->add_option("--out", out_dir, "Output directory"),
                               [&](RunConfig& c) { c.out = out_dir; });
        overrides.emplace_back(sub->add_option("--seed", seed, "Split seed"),
                               [&](RunConfig& c) { c.split.seed = seed; });
        sub->add_option("--config", config_path, "JSON run config; flags override it")->check(CLI::ExistingFile);
    };
    const auto probing = [&](CLI::App* sub) {
        overrides.emplace_back(sub->add_option("--bundle", bundle, "Activation bundle directory"),
                               [&](RunConfig& c) { c.bundle = bundle; });
        overrides.emplace_back(sub->add_option("--lambda", lambda, "Pin the ridge penalty (disables CV)"),
                               [&](RunConfig& c) { c.lambda = lambda; });
        overrides.emplace_back(sub->add_option("--lambda-grid", grid_csv, "Comma-separated CV grid"),
                               [&](RunConfig& c) {
                                   c.lambda_grid.clear();
                                   for (const auto& s : CLI::detail::split(grid_csv, ','))
                                       c.lambda_grid.push_back(std::stod(s));
                               });
        overrides.emplace_back(sub->add_option("--folds", folds, "CV folds"), [&](RunConfig& c) { c.folds = folds; });
        overrides.emplace_back(sub->add_option("--variants", variants_csv, "Comma-separated: empty,prompt,random"),
                               [&](RunConfig& c) { c.variants = CLI::detail::split(variants_csv, ','); });
        overrides.emplace_back(sub->add_option("--probes", probes_csv, "Comma-separated: linear,mlp"),
                               [&](RunConfig& c) { c.probes = CLI::detail::split(probes_csv, ','); });
        overrides.emplace_back(sub->add_option("--targets", targets_csv, "Comma-separated: point,box"),
                               [&](RunConfig& c) { c.targets = CLI::detail::split(targets_csv, ','); });
        overrides.emplace_back(sub->add_option("--workers", workers, "Worker threads"),
                               [&](RunConfig& c) { c.workers = workers; });
        overrides.emplace_back(sub->add_option("--mlp-seed", mlp_seed, "MLP seed"),
                               [&](RunConfig& c) { c.mlp_seed = mlp_seed; });
        overrides.emplace_back(sub->add_option("--mlp-epochs", epochs, "MLP epochs"),
                               [&](RunConfig& c) { c.mlp.epochs = epochs; });
        overrides.emplace_back(sub->add_flag("--standardize", standardize, "Scale ridge features to unit variance"),
                               [&](RunConfig& c) { c.standardize = standardize; });
    };

    auto* validate = app.add_subcommand("validate", "Check a manifest and, optionally, a bundle");
    common(validate);
    overrides.emplace_back(validate->add_option("--bundle", bundle, "Activation bundle directory"),
                           [&](RunConfig& c) { c.bundle = bundle; });

    auto* synth = app.add_subcommand("synth", "Write a planted-signal synthetic bundle (and manifest)");
    common(synth);
    overrides.emplace_back(synth->add_option("--n", n, "Landmarks to synthesize when no manifest is given"),
                           [&](RunConfig& c) { c.synth.n = n; });
    overrides.emplace_back(synth->add_option("--records-seed", records_seed, "Seed for synthesized landmarks"),
                           [&](RunConfig& c) { c.synth.records_seed = records_seed; });
    overrides.emplace_back(synth->add_option("--hidden-size", hidden, "Hidden size m"),
                           [&](RunConfig& c) { c.synth.hidden_size = hidden; });
    overrides.emplace_back(synth->add_option("--noise", noise, "Noise sigma on signal layers"),
                           [&](RunConfig& c) { c.synth.noise_sigma = noise; });
    overrides.emplace_back(synth->add_option("--layer-kinds", layer_kinds, "Comma-separated: noise,signal,warped"),
                           [&](RunConfig& c) { c.synth.layers = CLI::detail::split(layer_kinds, ','); });
    overrides.emplace_back(synth->add_option("--variants", variants_csv, "Comma-separated: empty,prompt,random"),
                           [&](RunConfig& c) { c.synth.variants = CLI::detail::split(variants_csv, ','); });
    overrides.emplace_back(synth->add_option("--planted", planted, "point, box or both"),
                           [&](RunConfig& c) { c.synth.planted = planted; });
    overrides.emplace_back(synth->add_option("--synth-seed", synth_seed, "Seed for activations"),
                           [&](RunConfig& c) { c.synth.seed = synth_seed; });
    overrides.emplace_back(synth->add_option("--model-tag", model_tag, "Model tag written to the bundle"),
                           [&](RunConfig& c) { c.synth.model_tag = model_tag; });

    auto* sweep = app.add_subcommand("sweep", "Fit and evaluate probes on every layer and write reports");
    common(sweep);
    probing(sweep);

    auto* baseline = app.add_subcommand("baseline", "Lexical nearest-name baseline on the test split");
    common(baseline);

    auto* fit = app.add_subcommand("fit", "Fit probes on one layer/variant and save them");
    common(fit);
    probing(fit);
    overrides.emplace_back(fit->add_option("--layer", layer, "Layer index"), [&](RunConfig& c) { c.fit.layer = layer; });
    overrides.emplace_back(fit->add_option("--variant", variant, "Variant"),
                           [&](RunConfig& c) { c.fit.variant = variant; });

    auto* report = app.add_subcommand("report", "Rebuild summary and plot data from a sweep CSV");
    report->add_option("--in", in_csv, "sweep.csv to read")->required()->check(CLI::ExistingFile);
    report->add_option("--baseline", baseline_path, "baseline.json to include")->check(CLI::ExistingFile);
    report->add_option("--out", out_dir, "Output directory")->required();

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << version << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        RunConfig config;
        if (!config_path.empty()) {
            try {
                config = from_json(nlohmann::json::parse(read_file(config_path)));
            } catch (const nlohmann::json::parse_error& e) {
                throw Error(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
            }
        }
        for (auto& [option, apply] : overrides) {
            if (option->count() > 0) apply(config);
        }
        if (config.workers == 0) throw UsageError("--workers must be >= 1");

        if (validate->parsed()) return detail::cmd_validate(config, out);
        if (synth->parsed()) return detail::cmd_synth(config, out);
        if (sweep->parsed()) return detail::cmd_sweep(config, out);
        if (baseline->parsed()) return detail::cmd_baseline(config, out);
        if (fit->parsed()) return detail::cmd_fit(config, out);
        if (report->parsed()) return detail::cmd_report(in_csv, baseline_path, out_dir, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        err << "usage error: bad number (" << e.what() << ")\n" << app.help();
        return 2;
    }
    return 2;
}

}  // namespace lmprobe::cli
