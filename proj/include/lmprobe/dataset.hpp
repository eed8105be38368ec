#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "hash.hpp"
#include "io.hpp"
#include "random.hpp"

namespace lmprobe {

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool is_finite() const noexcept {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
    }
    double operator[](std::size_t axis) const noexcept { return axis == 0 ? x : axis == 1 ? y : z; }
    friend bool operator==(const Point3&, const Point3&) = default;
};

/// Axis-aligned box in canonical (min, max) form.
struct Box3 {
    Point3 min;
    Point3 max;

    bool is_finite() const noexcept { return min.is_finite() && max.is_finite(); }
    bool is_ordered() const noexcept {
        return min.x <= max.x && min.y <= max.y && min.z <= max.z;
    }
    bool is_valid() const noexcept { return is_finite() && is_ordered(); }
    bool contains(const Point3& p) const noexcept {
        return min.x <= p.x && p.x <= max.x && min.y <= p.y && p.y <= max.y && min.z <= p.z &&
               p.z <= max.z;
    }
    double volume() const noexcept {
        return (max.x - min.x) * (max.y - min.y) * (max.z - min.z);
    }
    Point3 center() const noexcept {
        return {0.5 * (min.x + max.x), 0.5 * (min.y + max.y), 0.5 * (min.z + max.z)};
    }
    /// The eight corners, x varying fastest.
    std::array<Point3, 8> corners() const noexcept {
        std::array<Point3, 8> out;
        for (std::size_t i = 0; i < 8; ++i) {
            out[i] = {(i & 1) ? max.x : min.x, (i & 2) ? max.y : min.y, (i & 4) ? max.z : min.z};
        }
        return out;
    }
    friend bool operator==(const Box3&, const Box3&) = default;
};

struct LandmarkRecord {
    std::size_t id = 0;
    std::string name;
    Point3 point;
    Box3 box;
    friend bool operator==(const LandmarkRecord&, const LandmarkRecord&) = default;
};

struct Manifest {
    std::string coordinate_system;
    std::vector<LandmarkRecord> records;
    /// Non-fatal findings, e.g. a point lying outside its box.
    std::vector<std::string> warnings;
    /// SHA-256 of the manifest bytes as read from (or written to) disk.
    std::string sha256;
};

struct SplitSpec {
    std::uint64_t seed = 42;
    double train_fraction = 0.7;
};

struct Split {
    std::vector<std::size_t> train;  // ascending
    std::vector<std::size_t> test;   // ascending
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n\f\v");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n\f\v");
    return std::string(s.substr(first, last - first + 1));
}

inline Point3 parse_triple(const nlohmann::json& j, const std::string& field, std::size_t index) {
    if (!j.contains(field)) {
        throw Error(ErrorKind::MalformedManifest,
                    "landmark " + std::to_string(index) + " lacks field '" + field + "'");
    }
    const auto& arr = j.at(field);
    if (!arr.is_array() || arr.size() != 3) {
        throw Error(ErrorKind::MalformedManifest, "landmark " + std::to_string(index) + " field '" +
                                                      field + "' must be an array of 3 numbers");
    }
    std::array<double, 3> v{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (arr[i].is_number()) {
            v[i] = arr[i].get<double>();
        } else if (arr[i].is_null()) {
            // nlohmann serializes NaN/Inf as null; surface it as a non-finite value.
            v[i] = std::numeric_limits<double>::quiet_NaN();
        } else {
            throw Error(ErrorKind::MalformedManifest, "landmark " + std::to_string(index) +
                                                          " field '" + field + "' is not numeric");
        }
    }
    return {v[0], v[1], v[2]};
}

inline nlohmann::json triple(const Point3& p) { return nlohmann::json::array({p.x, p.y, p.z}); }

}  // namespace detail

/// Checks record invariants; returns a warning string (possibly empty) for
/// soft violations and throws InvalidRecord for hard ones.
inline std::string validate_record(const LandmarkRecord& r) {
    const std::string label = "landmark " + std::to_string(r.id) + " ('" + r.name + "')";
    if (detail::trim(r.name).empty()) {
        throw Error(ErrorKind::InvalidRecord, "landmark " + std::to_string(r.id) + " has an empty name");
    }
    if (!r.point.is_finite()) throw Error(ErrorKind::InvalidRecord, label + ": non-finite point");
    if (!r.box.is_finite()) throw Error(ErrorKind::InvalidRecord, label + ": non-finite box corner");
    if (!r.box.is_ordered()) throw Error(ErrorKind::InvalidRecord, label + ": box min exceeds max");
    if (!r.box.contains(r.point)) return label + ": point lies outside its box";
    return {};
}

inline Manifest parse_manifest(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::MalformedManifest, e.what());
    }
    if (!doc.is_object()) throw Error(ErrorKind::MalformedManifest, "top level must be an object");
    if (!doc.contains("landmarks") || !doc["landmarks"].is_array()) {
        throw Error(ErrorKind::MalformedManifest, "missing 'landmarks' array");
    }

    Manifest m;
    if (doc.contains("coordinate_system")) {
        if (!doc["coordinate_system"].is_string()) {
            throw Error(ErrorKind::MalformedManifest, "'coordinate_system' must be a string");
        }
        m.coordinate_system = doc["coordinate_system"].get<std::string>();
    }
    m.sha256 = sha256_hex(text);

    const auto& arr = doc["landmarks"];
    m.records.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const auto& j = arr[i];
        if (!j.is_object()) {
            throw Error(ErrorKind::MalformedManifest, "landmark " + std::to_string(i) + " is not an object");
        }
        if (!j.contains("name") || !j["name"].is_string()) {
            throw Error(ErrorKind::MalformedManifest, "landmark " + std::to_string(i) + " lacks a string 'name'");
        }
        LandmarkRecord r;
        r.id = i;
        r.name = j["name"].get<std::string>();
        r.point = detail::parse_triple(j, "point", i);
        r.box.min = detail::parse_triple(j, "box_min", i);
        r.box.max = detail::parse_triple(j, "box_max", i);
        if (auto warning = validate_record(r); !warning.empty()) m.warnings.push_back(std::move(warning));
        m.records.push_back(std::move(r));
    }
    return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw Error(ErrorKind::MalformedManifest, e.what());
    }
    return parse_manifest(text);
}

inline std::string serialize_manifest(const std::string& coordinate_system,
                                      std::span<const LandmarkRecord> records) {
    nlohmann::json doc;
    doc["coordinate_system"] = coordinate_system;
    auto& arr = doc["landmarks"] = nlohmann::json::array();
    for (const auto& r : records) {
        nlohmann::json j;
        j["name"] = r.name;
        j["point"] = detail::triple(r.point);
        j["box_min"] = detail::triple(r.box.min);
        j["box_max"] = detail::triple(r.box.max);
        arr.push_back(std::move(j));
    }
    return doc.dump(2) + "\n";
}

/// Writes the manifest and returns the SHA-256 of the bytes written.
inline std::string save_manifest(const std::filesystem::path& path, const std::string& coordinate_system,
                                 std::span<const LandmarkRecord> records) {
    const auto text = serialize_manifest(coordinate_system, records);
    write_file_atomic(path, text);
    return sha256_hex(text);
}

inline Box3 box_from_corners(std::span<const Point3> corners) {
    if (corners.size() != 8) {
        throw Error(ErrorKind::WrongCornerCount,
                    "expected 8 corners, got " + std::to_string(corners.size()));
    }
    for (const auto& c : corners) {
        if (!c.is_finite()) throw Error(ErrorKind::NonFiniteCorner, "corner has a non-finite component");
    }
    Box3 box{corners[0], corners[0]};
    for (const auto& c : corners.subspan(1)) {
        box.min = {std::min(box.min.x, c.x), std::min(box.min.y, c.y), std::min(box.min.z, c.z)};
        box.max = {std::max(box.max.x, c.x), std::max(box.max.y, c.y), std::max(box.max.z, c.z)};
    }
    return box;
}

/// Number of training rows for n records: floor(train_fraction * n).
inline std::size_t train_size(std::size_t n, double train_fraction) {
    // The epsilon absorbs representation error such as 0.7 * 10 = 6.999...
    return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
}

/// Seeded uniform shuffle of the ids; the first floor(fraction * n) are train.
inline Split split(std::size_t n, const SplitSpec& spec) {
    if (n < 2) throw Error(ErrorKind::TooFewRecords, "split needs at least 2 records, got " + std::to_string(n));
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
        throw Error(ErrorKind::InvalidSplit, "train_fraction must lie in (0, 1)");
    }
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(spec.seed);
    rng.shuffle(std::span<std::size_t>(ids));

    const auto n_train = train_size(n, spec.train_fraction);
    Split out;
    out.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

inline Split split(std::span<const LandmarkRecord> records, const SplitSpec& spec) {
    return split(records.size(), spec);
}

}  // namespace lmprobe
