#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dataset.hpp"
#include "random.hpp"
#include "targets.hpp"
#include "tensor_store.hpp"

namespace lmprobe {

/// What a synthetic layer contains.
///  - signal: X = Y·Wᵀ + ε
///  - warped: X = exp(Z)·Wᵀ + ε, Z the z-scored targets (exp applied componentwise)
///  - noise:  X ~ Normal(0, 1), independent of the targets
enum class LayerKind { noise, signal, warped };

constexpr std::string_view layer_kind_name(LayerKind k) noexcept {
    switch (k) {
    case LayerKind::noise: return "noise";
    case LayerKind::signal: return "signal";
    case LayerKind::warped: return "warped";
    }
    return "noise";
}

inline std::optional<LayerKind> parse_layer_kind(std::string_view s) {
    for (auto k : {LayerKind::noise, LayerKind::signal, LayerKind::warped}) {
        if (layer_kind_name(k) == s) return k;
    }
    return std::nullopt;
}

/// Which targets are planted: point (k=3), box (k=6), or both stacked (k=9).
enum class PlantedTargets { point, box, both };

constexpr std::string_view planted_name(PlantedTargets p) noexcept {
    return p == PlantedTargets::point ? "point" : p == PlantedTargets::box ? "box" : "both";
}

inline std::optional<PlantedTargets> parse_planted(std::string_view s) {
    for (auto p : {PlantedTargets::point, PlantedTargets::box, PlantedTargets::both}) {
        if (planted_name(p) == s) return p;
    }
    return std::nullopt;
}

struct SyntheticSpec {
    std::size_t hidden_size = 64;
    double noise_sigma = 0.01;
    std::vector<LayerKind> layers{LayerKind::noise, LayerKind::signal};
    std::vector<Variant> variants{Variant::empty};
    PlantedTargets planted = PlantedTargets::both;
    std::uint64_t seed = 0;
    std::string model_tag = "synthetic";
    /// m × k planted map; drawn from Normal(0, 1) with `seed` when absent.
    std::optional<Matrix> planted_map;

    void validate(std::size_t k) const {
        if (hidden_size < 1) throw Error(ErrorKind::InvalidConfig, "hidden_size must be >= 1");
        if (layers.empty()) throw Error(ErrorKind::InvalidConfig, "at least one layer is required");
        if (variants.empty()) throw Error(ErrorKind::InvalidConfig, "at least one variant is required");
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
            throw Error(ErrorKind::InvalidConfig, "noise_sigma must be finite and >= 0");
        }
        if (planted_map) {
            if (planted_map->rows() != static_cast<Eigen::Index>(hidden_size) ||
                planted_map->cols() != static_cast<Eigen::Index>(k)) {
                throw Error(ErrorKind::DimensionMismatch, "planted map must be hidden_size × " + std::to_string(k));
            }
            if (!planted_map->allFinite()) throw Error(ErrorKind::NonFiniteValue, "planted map is not finite");
        }
    }
};

inline Matrix planted_targets(std::span<const LandmarkRecord> records, PlantedTargets planted) {
    if (planted == PlantedTargets::point) return target_matrix(records, TargetKind::point);
    if (planted == PlantedTargets::box) return target_matrix(records, TargetKind::box);
    Matrix y(static_cast<Eigen::Index>(records.size()), 9);
    y << target_matrix(records, TargetKind::point), target_matrix(records, TargetKind::box);
    return y;
}

namespace detail {

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double sigma, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = sigma * rng.normal();
    return m;
}

inline constexpr std::uint64_t planted_map_stream = 0xFFFF'FFFFULL;

}  // namespace detail

/// Builds one activation matrix per (variant, layer), row-aligned to `records`.
/// Each (variant, layer) draws noise from its own seed stream.
inline std::vector<ActivationDataset> synthesize_activations(const SyntheticSpec& spec,
                                                             std::span<const LandmarkRecord> records) {
    const Matrix y = planted_targets(records, spec.planted);
    spec.validate(static_cast<std::size_t>(y.cols()));
    if (records.empty()) throw Error(ErrorKind::TooFewRecords, "no records to synthesize for");
    const auto n = y.rows();
    const auto m = static_cast<Eigen::Index>(spec.hidden_size);

    Matrix w;
    if (spec.planted_map) {
        w = *spec.planted_map;
    } else {
        Rng rng(derive_seed(spec.seed, detail::planted_map_stream));
        w = detail::gaussian(m, y.cols(), 1.0, rng);
    }

    // Warp acts on z-scored targets so that its curvature is scale-free.
    const Eigen::RowVectorXd mean = y.colwise().mean();
    Eigen::RowVectorXd scale = ((y.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt();
    for (Eigen::Index j = 0; j < scale.size(); ++j) {
        if (!(scale(j) > 0.0)) scale(j) = 1.0;
    }
    const Matrix z = (y.rowwise() - mean).array().rowwise() / scale.array();
    const Matrix warped = z.array().exp();

    std::vector<ActivationDataset> out;
    for (std::size_t v = 0; v < spec.variants.size(); ++v) {
        for (std::size_t layer = 0; layer < spec.layers.size(); ++layer) {
            Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(spec.variants[v]) * 100'000 + layer));
            ActivationDataset ds;
            ds.layer = layer;
            ds.variant = spec.variants[v];
            ds.model_tag = spec.model_tag;
            switch (spec.layers[layer]) {
            case LayerKind::noise: ds.matrix = detail::gaussian(n, m, 1.0, rng); break;
            case LayerKind::signal: ds.matrix = y * w.transpose() + detail::gaussian(n, m, spec.noise_sigma, rng); break;
            case LayerKind::warped:
                ds.matrix = warped * w.transpose() + detail::gaussian(n, m, spec.noise_sigma, rng);
                break;
            }
            out.push_back(std::move(ds));
        }
    }
    return out;
}

/// Synthesizes activations and writes them as a bundle under `dir`.
inline ActivationBundle generate_synthetic(const SyntheticSpec& spec, std::span<const LandmarkRecord> records,
                                           const std::filesystem::path& dir, const std::string& manifest_sha256 = {}) {
    const auto datasets = synthesize_activations(spec, records);
    return write_bundle(dir, datasets, manifest_sha256);
}

namespace detail {

inline constexpr std::array<std::string_view, 36> structures{
    "kidney",        "lung upper lobe", "lung lower lobe", "adrenal gland",  "femur",        "humerus",
    "rib",           "vertebra",        "liver",           "spleen",         "pancreas",     "stomach",
    "gallbladder",   "heart atrium",    "heart ventricle", "aorta",          "iliac artery", "iliac vein",
    "clavicle",      "scapula",         "hip",             "gluteus maximus", "gluteus medius", "autochthon",
    "iliopsoas",     "esophagus",       "trachea",         "duodenum",       "colon",        "small bowel",
    "urinary bladder", "brain",         "sacrum",          "portal vein",    "inferior vena cava", "sternum"};

}  // namespace detail

/// Stand-in landmarks with plausible multi-word names and boxes inside the
/// unit cube. Points lie inside their boxes.
inline std::vector<LandmarkRecord> synthesize_records(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LandmarkRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        LandmarkRecord r;
        r.id = i;
        const auto side = rng.below(3);
        std::string name = side == 0 ? "left " : side == 1 ? "right " : "";
        name += detail::structures[rng.below(detail::structures.size())];
        if (rng.below(3) == 0) name += " " + std::to_string(1 + rng.below(12));
        r.name = std::move(name);

        Point3 center{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
        Point3 half{rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.1)};
        r.box.min = {center.x - half.x, center.y - half.y, center.z - half.z};
        r.box.max = {center.x + half.x, center.y + half.y, center.z + half.z};
        r.point = {center.x + half.x * rng.uniform(-0.5, 0.5), center.y + half.y * rng.uniform(-0.5, 0.5),
                   center.z + half.z * rng.uniform(-0.5, 0.5)};
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace lmprobe
