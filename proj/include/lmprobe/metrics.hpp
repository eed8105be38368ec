#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dataset.hpp"
#include "error.hpp"

namespace lmprobe {

using TokenSet = std::set<std::string>;

enum class MetricKind { distance, dice };

constexpr std::string_view metric_name(MetricKind k) noexcept {
    return k == MetricKind::distance ? "distance" : "dice";
}

struct MetricSummary {
    MetricKind kind = MetricKind::distance;
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
    std::vector<double> per_sample;
};

inline double euclidean(const Point3& a, const Point3& b) {
    if (!a.is_finite() || !b.is_finite()) throw Error(ErrorKind::NonFiniteInput, "euclidean of non-finite point");
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    const double dz = a.z - b.z;
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// 2|P∩T| / (|P| + |T|) on axis-aligned volumes; 0 when both volumes vanish.
inline double dice(const Box3& predicted, const Box3& target) {
    if (!predicted.is_valid()) throw Error(ErrorKind::InvalidBox, "predicted box is not a valid (min <= max) box");
    if (!target.is_valid()) throw Error(ErrorKind::InvalidBox, "target box is not a valid (min <= max) box");
    double overlap = 1.0;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const double lo = std::max(predicted.min[axis], target.min[axis]);
        const double hi = std::min(predicted.max[axis], target.max[axis]);
        if (hi <= lo) {
            overlap = 0.0;
            break;
        }
        overlap *= hi - lo;
    }
    const double total = predicted.volume() + target.volume();
    if (total <= 0.0) return 0.0;
    return std::clamp(2.0 * overlap / total, 0.0, 1.0);
}

/// |Q∩T| / |Q∪T|; two empty sets score 0.
inline double jaccard(const TokenSet& q, const TokenSet& t) {
    std::size_t shared = 0;
    for (const auto& token : q) shared += t.count(token);
    const std::size_t joined = q.size() + t.size() - shared;
    if (joined == 0) return 0.0;
    return static_cast<double>(shared) / static_cast<double>(joined);
}

/// Lower-cased word tokens; any run of non-alphanumeric ASCII separates words.
/// Bytes >= 0x80 (UTF-8 sequences) count as word characters.
inline TokenSet tokenize(std::string_view name) {
    TokenSet out;
    std::string current;
    const auto flush = [&] {
        if (!current.empty()) out.insert(std::move(current));
        current.clear();
    };
    for (char ch : name) {
        const auto c = static_cast<unsigned char>(ch);
        if (c >= 0x80 || std::isalnum(c)) {
            current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

/// Mean and population std. Sums run over a sorted copy, so any permutation
/// of `values` yields bit-identical results.
inline MetricSummary summarize(std::span<const double> values, MetricKind kind) {
    if (values.empty()) throw Error(ErrorKind::EmptyInput, "cannot summarize an empty list");
    for (double v : values) {
        if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteInput, "summary input contains NaN or Inf");
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    const double mean = sum / n;
    double ss = 0.0;
    for (double v : sorted) ss += (v - mean) * (v - mean);

    MetricSummary s;
    s.kind = kind;
    s.mean = mean;
    s.std = std::sqrt(ss / n);
    s.per_sample.assign(values.begin(), values.end());
    return s;
}

}  // namespace lmprobe
