#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <utility>

#include <Eigen/Dense>

#include "dataset.hpp"
#include "error.hpp"

namespace lmprobe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class TargetKind { point, box };

inline constexpr std::array<TargetKind, 2> all_target_kinds{TargetKind::point, TargetKind::box};

constexpr std::string_view target_name(TargetKind k) noexcept { return k == TargetKind::point ? "point" : "box"; }

constexpr Eigen::Index target_width(TargetKind k) noexcept { return k == TargetKind::point ? 3 : 6; }

inline std::optional<TargetKind> parse_target_kind(std::string_view s) {
    if (s == "point") return TargetKind::point;
    if (s == "box") return TargetKind::box;
    return std::nullopt;
}

/// n×3 point targets, or n×6 box targets laid out (min x, min y, min z, max x, max y, max z).
inline Matrix target_matrix(std::span<const LandmarkRecord> records, TargetKind kind) {
    Matrix y(static_cast<Eigen::Index>(records.size()), target_width(kind));
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        const auto& r = records[i];
        if (kind == TargetKind::point) {
            y.row(row) << r.point.x, r.point.y, r.point.z;
        } else {
            y.row(row) << r.box.min.x, r.box.min.y, r.box.min.z, r.box.max.x, r.box.max.y, r.box.max.z;
        }
    }
    return y;
}

inline Point3 point_from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    return {row(0), row(1), row(2)};
}

inline Box3 box_from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    return {{row(0), row(1), row(2)}, {row(3), row(4), row(5)}};
}

/// Swaps min and max on any axis where a predicted box came out inverted.
inline void canonicalize_boxes(Matrix& y) {
    if (y.cols() != 6) throw Error(ErrorKind::DimensionMismatch, "box predictions need 6 columns");
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        for (Eigen::Index axis = 0; axis < 3; ++axis) {
            if (y(r, axis) > y(r, axis + 3)) std::swap(y(r, axis), y(r, axis + 3));
        }
    }
}

inline Matrix select_rows(const Matrix& m, std::span<const std::size_t> ids) {
    Matrix out(static_cast<Eigen::Index>(ids.size()), m.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= static_cast<std::size_t>(m.rows())) {
            throw Error(ErrorKind::DimensionMismatch, "row id " + std::to_string(ids[i]) + " out of range");
        }
        out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(ids[i]));
    }
    return out;
}

namespace detail {

inline void check_training_inputs(const Matrix& x, const Matrix& y, TargetKind kind) {
    if (x.rows() != y.rows()) {
        throw Error(ErrorKind::DimensionMismatch, "X has " + std::to_string(x.rows()) + " rows but Y has " +
                                                      std::to_string(y.rows()));
    }
    if (y.cols() != target_width(kind)) {
        throw Error(ErrorKind::DimensionMismatch, std::string(target_name(kind)) + " targets need " +
                                                      std::to_string(target_width(kind)) + " columns");
    }
    if (x.rows() < 2) throw Error(ErrorKind::TooFewSamples, "need at least 2 training rows");
    if (!x.allFinite()) throw Error(ErrorKind::NonFiniteInput, "activations contain NaN or Inf");
    if (!y.allFinite()) throw Error(ErrorKind::NonFiniteInput, "targets contain NaN or Inf");
}

}  // namespace detail

}  // namespace lmprobe
