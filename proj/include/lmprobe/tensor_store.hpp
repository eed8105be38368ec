#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dataset.hpp"
#include "error.hpp"
#include "io.hpp"

namespace lmprobe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// NPY v1.0
// ---------------------------------------------------------------------------

enum class Dtype { f4, f8 };

struct NpyHeader {
    Dtype dtype = Dtype::f4;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t data_offset = 0;

    std::size_t item_size() const noexcept { return dtype == Dtype::f4 ? 4 : 8; }
};

namespace npy {

inline constexpr std::string_view magic = "\x93NUMPY";
inline constexpr std::size_t preamble_size = 10;  // magic + version + u16 length
inline constexpr std::size_t alignment = 64;

inline std::string_view dict_value(std::string_view dict, std::string_view key, const std::string& where) {
    const std::string quoted_sq = "'" + std::string(key) + "'";
    const std::string quoted_dq = "\"" + std::string(key) + "\"";
    auto pos = dict.find(quoted_sq);
    std::size_t key_len = quoted_sq.size();
    if (pos == std::string_view::npos) {
        pos = dict.find(quoted_dq);
        key_len = quoted_dq.size();
    }
    if (pos == std::string_view::npos) {
        throw Error(ErrorKind::TruncatedFile, where + ": header lacks key " + std::string(key));
    }
    auto colon = dict.find(':', pos + key_len);
    if (colon == std::string_view::npos) {
        throw Error(ErrorKind::TruncatedFile, where + ": malformed header near " + std::string(key));
    }
    auto rest = dict.substr(colon + 1);
    rest.remove_prefix(std::min(rest.find_first_not_of(' '), rest.size()));
    return rest;
}

inline NpyHeader parse_header(std::string_view bytes, const std::string& where) {
    if (bytes.size() < magic.size() || bytes.substr(0, magic.size()) != magic) {
        throw Error(ErrorKind::BadMagic, where);
    }
    if (bytes.size() < preamble_size) throw Error(ErrorKind::TruncatedFile, where + ": short preamble");
    const auto major = static_cast<unsigned char>(bytes[6]);
    const auto minor = static_cast<unsigned char>(bytes[7]);
    if (major != 1 || minor != 0) {
        throw Error(ErrorKind::UnsupportedVersion,
                    where + ": NPY version " + std::to_string(major) + "." + std::to_string(minor));
    }
    const std::size_t header_len = static_cast<unsigned char>(bytes[8]) |
                                   (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    if (bytes.size() < preamble_size + header_len) {
        throw Error(ErrorKind::TruncatedFile, where + ": header shorter than declared");
    }
    const auto dict = bytes.substr(preamble_size, header_len);

    NpyHeader h;
    h.data_offset = preamble_size + header_len;

    const auto descr = dict_value(dict, "descr", where);
    if (descr.size() < 5 || (descr[0] != '\'' && descr[0] != '"')) {
        throw Error(ErrorKind::UnsupportedDtype, where + ": unreadable descr");
    }
    const auto code = descr.substr(1, 3);
    if (code == "<f4") {
        h.dtype = Dtype::f4;
    } else if (code == "<f8") {
        h.dtype = Dtype::f8;
    } else {
        const auto end = descr.find(descr[0], 1);
        throw Error(ErrorKind::UnsupportedDtype,
                    where + ": descr " + std::string(descr.substr(1, end == std::string_view::npos ? 3 : end - 1)));
    }

    const auto order = dict_value(dict, "fortran_order", where);
    if (order.starts_with("True")) throw Error(ErrorKind::UnsupportedOrder, where + ": fortran_order is True");
    if (!order.starts_with("False")) throw Error(ErrorKind::TruncatedFile, where + ": unreadable fortran_order");

    const auto shape = dict_value(dict, "shape", where);
    if (shape.empty() || shape[0] != '(') throw Error(ErrorKind::TruncatedFile, where + ": unreadable shape");
    const auto close = shape.find(')');
    if (close == std::string_view::npos) throw Error(ErrorKind::TruncatedFile, where + ": unterminated shape");
    std::vector<std::size_t> dims;
    std::size_t i = 1;
    while (i < close) {
        while (i < close && (shape[i] == ' ' || shape[i] == ',')) ++i;
        if (i >= close) break;
        std::size_t value = 0;
        bool any = false;
        while (i < close && shape[i] >= '0' && shape[i] <= '9') {
            value = value * 10 + static_cast<std::size_t>(shape[i] - '0');
            ++i;
            any = true;
        }
        if (!any) throw Error(ErrorKind::TruncatedFile, where + ": unreadable shape");
        dims.push_back(value);
    }
    if (dims.size() != 2) {
        throw Error(ErrorKind::UnsupportedShape,
                    where + ": expected a 2-D array, got " + std::to_string(dims.size()) + " dimensions");
    }
    h.rows = dims[0];
    h.cols = dims[1];
    return h;
}

template <typename T>
T load_le(const char* p) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) {
        bits |= static_cast<U>(static_cast<unsigned char>(p[b])) << (8 * b);
    }
    return std::bit_cast<T>(bits);
}

template <typename T>
void store_le(std::string& out, T value) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    auto bits = std::bit_cast<U>(value);
    for (std::size_t b = 0; b < sizeof(T); ++b) {
        out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
}

}  // namespace npy

/// Reads only the header, for shape validation without loading data.
inline NpyHeader read_array_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    std::string head(npy::preamble_size, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(in.gcount()));
    if (head.size() >= npy::magic.size() && head.substr(0, npy::magic.size()) != npy::magic) {
        throw Error(ErrorKind::BadMagic, path.string());
    }
    if (head.size() < npy::preamble_size) {
        return npy::parse_header(head, path.string());
    }
    const std::size_t header_len = static_cast<unsigned char>(head[8]) |
                                   (static_cast<std::size_t>(static_cast<unsigned char>(head[9])) << 8);
    std::string dict(header_len, '\0');
    in.read(dict.data(), static_cast<std::streamsize>(header_len));
    dict.resize(static_cast<std::size_t>(in.gcount()));
    return npy::parse_header(head + dict, path.string());
}

inline Matrix parse_array(std::string_view bytes, const std::string& where) {
    const auto h = npy::parse_header(bytes, where);
    const std::size_t count = h.rows * h.cols;
    const std::size_t need = h.data_offset + count * h.item_size();
    if (bytes.size() < need) {
        throw Error(ErrorKind::TruncatedFile, where + ": expected " + std::to_string(need) + " bytes, found " +
                                                  std::to_string(bytes.size()));
    }
    Matrix out(static_cast<Eigen::Index>(h.rows), static_cast<Eigen::Index>(h.cols));
    const char* p = bytes.data() + h.data_offset;
    for (std::size_t r = 0; r < h.rows; ++r) {
        for (std::size_t c = 0; c < h.cols; ++c, p += h.item_size()) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                h.dtype == Dtype::f4 ? static_cast<double>(npy::load_le<float>(p)) : npy::load_le<double>(p);
        }
    }
    return out;
}

/// Reads a 2-D little-endian float32/float64 C-order NPY v1.0 file, widened to double.
inline Matrix read_array(const std::filesystem::path& path) {
    return parse_array(read_file(path), path.string());
}

inline std::string serialize_array(const Matrix& matrix, Dtype dtype = Dtype::f4) {
    if (!matrix.allFinite()) throw Error(ErrorKind::NonFiniteValue, "array contains NaN or Inf");
    std::string dict = "{'descr': '";
    dict += dtype == Dtype::f4 ? "<f4" : "<f8";
    dict += "', 'fortran_order': False, 'shape': (" + std::to_string(matrix.rows()) + ", " +
            std::to_string(matrix.cols()) + "), }";
    const std::size_t unpadded = npy::preamble_size + dict.size() + 1;
    const std::size_t padded = (unpadded + npy::alignment - 1) / npy::alignment * npy::alignment;
    dict.append(padded - unpadded, ' ');
    dict.push_back('\n');

    std::string out;
    const std::size_t item = dtype == Dtype::f4 ? 4 : 8;
    out.reserve(padded + static_cast<std::size_t>(matrix.size()) * item);
    out.append(npy::magic);
    out.push_back('\x01');
    out.push_back('\x00');
    out.push_back(static_cast<char>(dict.size() & 0xFF));
    out.push_back(static_cast<char>((dict.size() >> 8) & 0xFF));
    out += dict;
    for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
        for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
            if (dtype == Dtype::f4) {
                npy::store_le(out, static_cast<float>(matrix(r, c)));
            } else {
                npy::store_le(out, matrix(r, c));
            }
        }
    }
    return out;
}

/// Writes NPY v1.0, C-order; float32 unless asked otherwise.
inline void write_array(const std::filesystem::path& path, const Matrix& matrix, Dtype dtype = Dtype::f4) {
    write_file_atomic(path, serialize_array(matrix, dtype));
}

// ---------------------------------------------------------------------------
// Activation datasets and bundles
// ---------------------------------------------------------------------------

enum class Variant { empty, prompt, random };

inline constexpr std::array<Variant, 3> all_variants{Variant::empty, Variant::prompt, Variant::random};

constexpr std::string_view variant_name(Variant v) noexcept {
    switch (v) {
    case Variant::empty: return "empty";
    case Variant::prompt: return "prompt";
    case Variant::random: return "random";
    }
    return "empty";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
    for (auto v : all_variants) {
        if (variant_name(v) == s) return v;
    }
    return std::nullopt;
}

/// Hidden states for one (layer, variant); row i belongs to landmark id i.
struct ActivationDataset {
    std::size_t layer = 0;
    Variant variant = Variant::empty;
    std::string model_tag;
    Matrix matrix;

    std::size_t row_count() const noexcept { return static_cast<std::size_t>(matrix.rows()); }
    std::size_t hidden_size() const noexcept { return static_cast<std::size_t>(matrix.cols()); }
};

inline constexpr std::string_view bundle_index_name = "bundle.json";

inline std::string array_file_name(Variant variant, std::size_t layer) {
    return "acts_" + std::string(variant_name(variant)) + "_layer" + std::to_string(layer) + ".npy";
}

inline std::string file_key(Variant variant, std::size_t layer) {
    return std::string(variant_name(variant)) + "/" + std::to_string(layer);
}

struct ActivationBundle {
    std::filesystem::path dir;
    std::string model_tag;
    std::size_t num_layers = 0;
    std::size_t hidden_size = 0;
    std::size_t row_count = 0;
    std::set<Variant> variants;
    std::map<std::pair<Variant, std::size_t>, std::filesystem::path> files;  // relative to dir
    std::string manifest_sha256;
    std::vector<std::string> warnings;

    std::filesystem::path path_of(Variant variant, std::size_t layer) const {
        auto it = files.find({variant, layer});
        if (it == files.end()) {
            throw Error(ErrorKind::MissingLayer, "bundle has no array for " + file_key(variant, layer));
        }
        return dir / it->second;
    }
};

inline nlohmann::json bundle_index_json(const ActivationBundle& b) {
    nlohmann::json j;
    j["model_tag"] = b.model_tag;
    j["num_layers"] = b.num_layers;
    j["hidden_size"] = b.hidden_size;
    j["row_count"] = b.row_count;
    j["manifest_sha256"] = b.manifest_sha256;
    auto& files = j["files"] = nlohmann::json::object();
    for (const auto& [key, rel] : b.files) files[file_key(key.first, key.second)] = rel.generic_string();
    return j;
}

/// Parses and validates a bundle directory against the expected record count.
/// An empty `manifest_sha256` skips the checksum comparison; a mismatch is a warning.
inline ActivationBundle load_bundle(const std::filesystem::path& dir, std::size_t record_count,
                                    std::string_view manifest_sha256 = {}) {
    const auto index_path = dir / bundle_index_name;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(index_path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedIndex, index_path.string() + ": " + e.what());
    }

    ActivationBundle b;
    b.dir = dir;
    try {
        b.model_tag = j.at("model_tag").get<std::string>();
        b.num_layers = j.at("num_layers").get<std::size_t>();
        b.hidden_size = j.at("hidden_size").get<std::size_t>();
        b.row_count = j.at("row_count").get<std::size_t>();
        b.manifest_sha256 = j.value("manifest_sha256", std::string{});
        for (const auto& [key, rel] : j.at("files").items()) {
            const auto slash = key.find('/');
            const auto variant = parse_variant(std::string_view(key).substr(0, slash));
            if (slash == std::string::npos || !variant) {
                throw Error(ErrorKind::MalformedIndex, "bad file key '" + key + "'");
            }
            std::size_t layer = 0;
            try {
                std::size_t used = 0;
                layer = std::stoul(key.substr(slash + 1), &used);
                if (used != key.size() - slash - 1) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw Error(ErrorKind::MalformedIndex, "bad layer in file key '" + key + "'");
            }
            b.variants.insert(*variant);
            b.files[{*variant, layer}] = rel.get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedIndex, index_path.string() + ": " + e.what());
    }

    if (b.num_layers == 0 || b.variants.empty()) {
        throw Error(ErrorKind::MissingLayer, "bundle declares no layers");
    }
    if (b.row_count != record_count) {
        throw Error(ErrorKind::RowCountMismatch, "bundle row_count " + std::to_string(b.row_count) +
                                                     " but manifest has " + std::to_string(record_count) +
                                                     " records");
    }
    for (auto variant : b.variants) {
        for (std::size_t layer = 0; layer < b.num_layers; ++layer) {
            if (!b.files.contains({variant, layer})) {
                throw Error(ErrorKind::MissingLayer, "no array for " + file_key(variant, layer));
            }
        }
    }
    for (const auto& [key, rel] : b.files) {
        if (key.second >= b.num_layers) {
            throw Error(ErrorKind::MissingLayer, "layer " + file_key(key.first, key.second) +
                                                     " lies outside 0.." + std::to_string(b.num_layers - 1));
        }
        const auto path = dir / rel;
        if (!std::filesystem::exists(path)) {
            throw Error(ErrorKind::MissingLayer, "referenced file missing: " + path.string());
        }
        const auto h = read_array_header(path);
        if (h.rows != b.row_count) {
            throw Error(ErrorKind::RowCountMismatch, path.string() + " has " + std::to_string(h.rows) +
                                                         " rows, expected " + std::to_string(b.row_count));
        }
        if (h.cols != b.hidden_size) {
            throw Error(ErrorKind::RaggedHiddenSize, path.string() + " has hidden size " +
                                                         std::to_string(h.cols) + ", expected " +
                                                         std::to_string(b.hidden_size));
        }
    }
    if (!manifest_sha256.empty() && !b.manifest_sha256.empty() && b.manifest_sha256 != manifest_sha256) {
        b.warnings.push_back("bundle was extracted from a different manifest (sha256 mismatch)");
    }
    return b;
}

inline ActivationBundle load_bundle(const std::filesystem::path& dir, const Manifest& manifest) {
    return load_bundle(dir, manifest.records.size(), manifest.sha256);
}

inline ActivationDataset load_dataset(const ActivationBundle& bundle, Variant variant, std::size_t layer) {
    ActivationDataset ds;
    ds.layer = layer;
    ds.variant = variant;
    ds.model_tag = bundle.model_tag;
    const auto path = bundle.path_of(variant, layer);
    ds.matrix = read_array(path);
    if (ds.row_count() != bundle.row_count) {
        throw Error(ErrorKind::RowCountMismatch, path.string());
    }
    if (ds.hidden_size() != bundle.hidden_size) {
        throw Error(ErrorKind::RaggedHiddenSize, path.string());
    }
    if (!ds.matrix.allFinite()) throw Error(ErrorKind::NonFiniteValue, path.string() + " contains NaN or Inf");
    return ds;
}

/// Writes every dataset as acts_<variant>_layer<k>.npy plus the bundle index.
/// The index is written last, so a crashed writer leaves no loadable bundle.
inline ActivationBundle write_bundle(const std::filesystem::path& dir, std::span<const ActivationDataset> datasets,
                                     const std::string& manifest_sha256) {
    if (datasets.empty()) throw Error(ErrorKind::EmptyInput, "no datasets to write");
    ActivationBundle b;
    b.dir = dir;
    b.model_tag = datasets.front().model_tag;
    b.hidden_size = datasets.front().hidden_size();
    b.row_count = datasets.front().row_count();
    b.manifest_sha256 = manifest_sha256;
    for (const auto& ds : datasets) {
        if (ds.row_count() != b.row_count) throw Error(ErrorKind::RowCountMismatch, file_key(ds.variant, ds.layer));
        if (ds.hidden_size() != b.hidden_size) throw Error(ErrorKind::RaggedHiddenSize, file_key(ds.variant, ds.layer));
        const auto name = array_file_name(ds.variant, ds.layer);
        write_array(dir / name, ds.matrix);
        b.files[{ds.variant, ds.layer}] = name;
        b.variants.insert(ds.variant);
        b.num_layers = std::max(b.num_layers, ds.layer + 1);
    }
    write_file_atomic(dir / bundle_index_name, bundle_index_json(b).dump(2) + "\n");
    return b;
}

}  // namespace lmprobe
