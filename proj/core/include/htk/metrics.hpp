#pragma once

// Saliency style agreement metrics between predicted and ground truth maps,
// plus the union-of-annotators evaluation protocol. Everything here is double
// precision and deterministic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "htk/common.hpp"
#include "htk/heatmap.hpp"

namespace htk {

enum class KlDirection { GtToPred, PredToGt };

constexpr double kMetricEps = 1e-12;
constexpr double kUnitSumTol = 1e-6;

namespace detail {

inline void check_pair(const Heatmap& a, const Heatmap& b, const char* op) {
    if (a.h != b.h || a.w != b.w)
        throw ShapeError(std::string(op) + ": map sizes differ (" + std::to_string(a.h) + "x" +
                         std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" + std::to_string(b.w) + ")");
}

inline void check_unit_sum(const Heatmap& m, const char* op) {
    const double s = heatmap_sum(m);
    if (std::abs(s - 1.0) > kUnitSumTol)
        throw ValueError(std::string(op) + ": map is not unit-sum (sum=" + std::to_string(s) + ")");
}

}  // namespace detail

// KL divergence between unit-sum maps. Terms with zero reference mass
// contribute nothing; inputs must already be normalized.
inline double kld(const Heatmap& pred, const Heatmap& gt, KlDirection dir = KlDirection::GtToPred) {
    detail::check_pair(pred, gt, "kld");
    detail::check_unit_sum(pred, "kld");
    detail::check_unit_sum(gt, "kld");
    const Heatmap& ref = dir == KlDirection::GtToPred ? gt : pred;
    const Heatmap& other = dir == KlDirection::GtToPred ? pred : gt;
    double acc = 0.0;
    for (std::size_t i = 0; i < ref.v.size(); ++i) {
        const double r = ref.v[i];
        if (r <= 0.0) continue;
        acc += r * std::log(r / (other.v[i] + kMetricEps) + kMetricEps);
    }
    return acc;
}

// Histogram intersection of unit-sum maps, in [0,1].
inline double similarity(const Heatmap& pred, const Heatmap& gt) {
    detail::check_pair(pred, gt, "similarity");
    detail::check_unit_sum(pred, "similarity");
    detail::check_unit_sum(gt, "similarity");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) acc += std::min(pred.v[i], gt.v[i]);
    return acc;
}

// ROC area where positives are the pixels whose unit-max normalized ground
// truth reaches 0.5, thresholds sweep the distinct predicted values at those
// pixels, and the curve is closed with (0,0) and (1,1). Ground truth without
// both positives and negatives is rejected; callers exclude such pairs.
inline double auc_judd(const Heatmap& pred, const Heatmap& gt) {
    detail::check_pair(pred, gt, "auc_judd");
    if (heatmap_max(gt) <= 0.0) throw ValueError("auc_judd: ground truth has no positives");
    const Heatmap g = normalize_max(gt);
    std::vector<double> pv, nv;
    pv.reserve(g.v.size());
    for (std::size_t i = 0; i < g.v.size(); ++i) {
        if (g.v[i] >= 0.5)
            pv.push_back(pred.v[i]);
        else
            nv.push_back(pred.v[i]);
    }
    if (pv.empty()) throw ValueError("auc_judd: ground truth has no positives");
    if (nv.empty()) throw ValueError("auc_judd: ground truth has no negatives");
    std::vector<double> th = pv;
    std::sort(th.begin(), th.end(), std::greater<double>());
    th.erase(std::unique(th.begin(), th.end()), th.end());
    std::sort(pv.begin(), pv.end());
    std::sort(nv.begin(), nv.end());
    auto frac_ge = [](const std::vector<double>& xs, double t) {
        const auto it = std::lower_bound(xs.begin(), xs.end(), t);
        return static_cast<double>(xs.end() - it) / static_cast<double>(xs.size());
    };
    std::vector<std::pair<double, double>> curve;  // (fpr, tpr)
    curve.reserve(th.size() + 2);
    curve.emplace_back(0.0, 0.0);
    for (double t : th) curve.emplace_back(frac_ge(nv, t), frac_ge(pv, t));
    curve.emplace_back(1.0, 1.0);
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        const double dx = curve[i].first - curve[i - 1].first;
        area += dx * (curve[i].second + curve[i - 1].second) * 0.5;
    }
    return area;
}

// Pixelwise max over annotators' maps, renormalized to unit sum.
inline Heatmap union_gt(const std::vector<Heatmap>& maps) {
    if (maps.empty()) throw ValueError("union_gt: no maps");
    Heatmap out = maps[0];
    for (std::size_t k = 1; k < maps.size(); ++k) {
        detail::check_pair(out, maps[k], "union_gt");
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::max(out.v[i], maps[k].v[i]);
    }
    return normalize_sum(out);
}

// Ground truth from point annotations: a Gaussian bump per keypoint, summed
// over points and normalized to unit sum. Default spread scales with the map
// so different resolutions behave alike.
inline Heatmap keypoints_to_heatmap(int h, int w, const std::vector<std::pair<double, double>>& xy_points,
                                    double sigma = -1.0) {
    if (xy_points.empty()) throw ValueError("keypoints_to_heatmap: no points");
    if (sigma <= 0.0) sigma = 0.05 * static_cast<double>(std::min(h, w));
    Heatmap out(h, w);
    for (const auto& [cx, cy] : xy_points) {
        const Heatmap bump = gaussian_heatmap(h, w, cx, cy, sigma);
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bump.v[i];
    }
    return normalize_sum(out);
}

inline std::pair<int, int> argmax_yx(const Heatmap& m) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < m.v.size(); ++i)
        if (m.v[i] > m.v[best]) best = i;
    return {static_cast<int>(best) / m.w, static_cast<int>(best) % m.w};
}

struct MetricScores {
    double kld = 0.0;
    double sim = 0.0;
    double auc = 0.0;
};

// Unweighted mean over per (image, action) rows.
inline MetricScores mean_scores(const std::vector<MetricScores>& rows) {
    if (rows.empty()) throw ValueError("mean_scores: no rows");
    MetricScores m;
    for (const auto& r : rows) {
        m.kld += r.kld;
        m.sim += r.sim;
        m.auc += r.auc;
    }
    const double n = static_cast<double>(rows.size());
    m.kld /= n;
    m.sim /= n;
    m.auc /= n;
    return m;
}

struct PairEval {
    std::string image;
    std::string action;
    Heatmap pred;                 // raw prediction, any positive scale
    std::vector<Heatmap> annots;  // one unit-sum map per annotator
};

struct EvalRow {
    std::string image;
    std::string action;
    MetricScores s;
};

struct MetricsReport {
    std::vector<EvalRow> rows;
    MetricScores mean;
    std::size_t pairs = 0;
    std::size_t excluded = 0;
};

// Per pair: union ground truth, then all three metrics; aggregate by
// unweighted mean. Degenerate pairs are reported and excluded.
inline MetricsReport evaluate(const std::vector<PairEval>& pairs, KlDirection dir = KlDirection::GtToPred) {
    MetricsReport rep;
    rep.pairs = pairs.size();
    std::vector<MetricScores> rows;
    for (const auto& p : pairs) {
        try {
            const Heatmap gt = union_gt(p.annots);
            const Heatmap pred_sum = normalize_sum(p.pred);
            MetricScores s;
            s.auc = auc_judd(p.pred, gt);
            s.kld = kld(pred_sum, gt, dir);
            s.sim = similarity(pred_sum, gt);
            rep.rows.push_back({p.image, p.action, s});
            rows.push_back(s);
        } catch (const ValueError& e) {
            warn("evaluate: excluding pair (" + p.image + ", " + p.action + "): " + e.what());
            rep.excluded++;
        }
    }
    if (rows.empty()) throw ValueError("evaluate: no evaluable pairs");
    rep.mean = mean_scores(rows);
    return rep;
}

}  // namespace htk
