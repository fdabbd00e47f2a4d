#pragma once

// Gradient-weighted interaction hotspot extraction, the two reference
// baselines (center bias, Grad-CAM), and embedding clustering.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "htk/common.hpp"
#include "htk/heatmap.hpp"
#include "htk/net.hpp"
#include "htk/tensor.hpp"

namespace htk {

// Collapse channels of a feature-sized gradient: sum_k ReLU(grad_k * x_k).
template <typename T>
Heatmap gradient_activation_map(const Tensor<T>& x, const std::vector<T>& grad) {
    if (x.rank() != 3) throw ShapeError("gradient_activation_map: expected x[C,h,w]");
    if (grad.size() != x.value().size()) throw ShapeError("gradient_activation_map: gradient size mismatch");
    const int C = x.dim(0), h = x.dim(1), w = x.dim(2);
    Heatmap out(h, w);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int c = 0; c < C; ++c) {
        const T* xp = x.data() + static_cast<std::size_t>(c) * hw;
        const T* gp = grad.data() + static_cast<std::size_t>(c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
            const double v = static_cast<double>(gp[i]) * static_cast<double>(xp[i]);
            if (v > 0.0) out.v[static_cast<std::size_t>(i)] += v;
        }
    }
    return out;
}

namespace detail {
template <typename T>
void require_finite_params(HotspotModel<T>& model) {
    if (!model.all_finite()) throw ValueError("model parameters are not finite");
}
}  // namespace detail

// Raw feature-resolution hotspot map for one action: backprop the pre-softmax
// score through the anticipation module to the inactive embedding, then
// gradient times activation, rectified, summed over channels.
template <typename T>
Heatmap hotspot_map(HotspotModel<T>& model, const Tensor<T>& x_I, int action) {
    detail::require_finite_params(model);
    if (action < 0 || action >= model.num_actions())
        throw ValueError("hotspot_map: action index " + std::to_string(action) + " out of range");
    Tensor<T> x = x_I.detached(true);
    Tape<T> tape;
    Tensor<T> y = model.forward_inactive(&tape, x, false);
    Tensor<T> ya = pick(&tape, y, action);
    tape.backward(ya);
    std::vector<T> grad(x.value().size(), T(0));
    if (x.has_grad()) grad = x.grad();
    return gradient_activation_map(x, grad);
}

// Path-ablated variant: gradients taken at the hypothesized active embedding
// F_ant(x_I) rather than at x_I, so they do not traverse the anticipation
// module. Used to show the through-module path matters.
template <typename T>
Heatmap hotspot_map_active_path(HotspotModel<T>& model, const Tensor<T>& x_I, int action) {
    detail::require_finite_params(model);
    if (action < 0 || action >= model.num_actions())
        throw ValueError("hotspot_map_active_path: action index out of range");
    Tensor<T> xa;
    {
        Tensor<T> x = x_I.detached(false);
        xa = model.anticipate(nullptr, x, false);
    }
    Tensor<T> xt = xa.detached(true);
    Tape<T> tape;
    const int d = model.feature_channels();
    Tensor<T> g = model.pool(&tape, xt);
    auto hc = lstm_step(&tape, g, Tensor<T>::zeros(Shape{d}), Tensor<T>::zeros(Shape{d}), model.lstm.Wx,
                        model.lstm.Wh, model.lstm.b);
    Tensor<T> y = linear(&tape, hc.h, model.classifier.W, model.classifier.b);
    Tensor<T> ya = pick(&tape, y, action);
    tape.backward(ya);
    std::vector<T> grad(xt.value().size(), T(0));
    if (xt.has_grad()) grad = xt.grad();
    return gradient_activation_map(xt, grad);
}

inline Heatmap upsample_map(const Heatmap& m, int H, int W) {
    Tensor<double> t(Shape{1, m.h, m.w}, m.v);
    Tensor<double> u = bilinear_upsample<double>(nullptr, t, H, W);
    Heatmap out(H, W);
    out.v = u.value();
    return out;
}

struct HotspotStack {
    std::string image_id;
    std::vector<Heatmap> maps;  // raw, image-sized, one per action
};

// One raw image-sized map per action for an inactive image. Callers normalize
// unit-sum for metrics and unit-max for rendering.
template <typename T>
HotspotStack predict_hotspots(HotspotModel<T>& model, const Tensor<T>& image, std::string image_id = {}) {
    if (image.rank() != 3) throw ShapeError("predict_hotspots: expected image[3,H,W]");
    const int H = image.dim(1), W = image.dim(2);
    Tensor<T> x_I = model.encode_frame(nullptr, image);
    HotspotStack stack;
    stack.image_id = std::move(image_id);
    stack.maps.reserve(static_cast<std::size_t>(model.num_actions()));
    for (int a = 0; a < model.num_actions(); ++a)
        stack.maps.push_back(upsample_map(hotspot_map(model, x_I, a), H, W));
    return stack;
}

// Classic class activation mapping on the single-step video response:
// channel weights are spatial mean gradients, map = ReLU(sum_k alpha_k x^k).
template <typename T>
Heatmap gradcam_map(HotspotModel<T>& model, const Tensor<T>& image, int action) {
    detail::require_finite_params(model);
    if (action < 0 || action >= model.num_actions())
        throw ValueError("gradcam_map: action index out of range");
    if (image.rank() != 3) throw ShapeError("gradcam_map: expected image[3,H,W]");
    const int H = image.dim(1), W = image.dim(2);
    Tensor<T> feat = model.encode_frame(nullptr, image);
    Tensor<T> x = feat.detached(true);
    Tape<T> tape;
    const int d = model.feature_channels();
    Tensor<T> g = model.pool(&tape, x);
    auto hc = lstm_step(&tape, g, Tensor<T>::zeros(Shape{d}), Tensor<T>::zeros(Shape{d}), model.lstm.Wx,
                        model.lstm.Wh, model.lstm.b);
    Tensor<T> y = linear(&tape, hc.h, model.classifier.W, model.classifier.b);
    Tensor<T> ya = pick(&tape, y, action);
    tape.backward(ya);
    const int C = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    std::vector<T> grad(x.value().size(), T(0));
    if (x.has_grad()) grad = x.grad();
    Heatmap out(h, w);
    for (int c = 0; c < C; ++c) {
        const T* gp = grad.data() + static_cast<std::size_t>(c) * hw;
        double alpha = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) alpha += static_cast<double>(gp[i]);
        alpha /= static_cast<double>(hw);
        const T* xp = x.data() + static_cast<std::size_t>(c) * hw;
        for (std::int64_t i = 0; i < hw; ++i)
            out.v[static_cast<std::size_t>(i)] += alpha * static_cast<double>(xp[i]);
    }
    for (auto& v : out.v) v = std::max(v, 0.0);
    return upsample_map(out, H, W);
}

// Isotropic Gaussian at the image center, unit sum.
inline Heatmap center_bias_map(int H, int W) {
    if (H < 1 || W < 1) throw ShapeError("center_bias_map: extents must be positive");
    const double sigma = 0.25 * static_cast<double>(std::min(H, W));
    const double cx = (static_cast<double>(W) - 1.0) / 2.0;
    const double cy = (static_cast<double>(H) - 1.0) / 2.0;
    return normalize_sum(gaussian_heatmap(H, W, cx, cy, sigma));
}

// ---------------------------------------------------------------------------
// Average-linkage agglomerative clustering of class embeddings
// ---------------------------------------------------------------------------

struct DendrogramMerge {
    int a = 0;       // cluster ids; leaves are 0..C-1, internal nodes continue upward
    int b = 0;
    double height = 0.0;
    int id = 0;      // id of the merged cluster
};

struct Dendrogram {
    std::vector<std::string> labels;  // leaf labels
    std::vector<DendrogramMerge> merges;
};

// Average linkage over an explicit distance matrix. Ties break toward the
// smallest pair of cluster ids so output is deterministic.
inline Dendrogram agglomerate_average_linkage(std::vector<std::vector<double>> dist,
                                              std::vector<std::string> labels) {
    const int C = static_cast<int>(labels.size());
    if (C < 2) throw ValueError("agglomerate_average_linkage: need at least 2 leaves");
    if (static_cast<int>(dist.size()) != C) throw ShapeError("distance matrix size mismatch");
    for (const auto& row : dist)
        if (static_cast<int>(row.size()) != C) throw ShapeError("distance matrix is not square");

    struct Cluster {
        int id;
        int size;
        bool alive;
    };
    std::vector<Cluster> cl;
    cl.reserve(static_cast<std::size_t>(2 * C - 1));
    for (int i = 0; i < C; ++i) cl.push_back({i, 1, true});
    // dist grows as clusters merge; index by position in cl
    auto d_at = [&](int i, int j) -> double& { return dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]; };

    Dendrogram out;
    out.labels = std::move(labels);
    int next_id = C;
    for (int step = 0; step < C - 1; ++step) {
        int bi = -1, bj = -1;
        double best = 0.0;
        for (int i = 0; i < static_cast<int>(cl.size()); ++i) {
            if (!cl[static_cast<std::size_t>(i)].alive) continue;
            for (int j = i + 1; j < static_cast<int>(cl.size()); ++j) {
                if (!cl[static_cast<std::size_t>(j)].alive) continue;
                const double dij = d_at(i, j);
                if (bi < 0 || dij < best) {
                    best = dij;
                    bi = i;
                    bj = j;
                }
            }
        }
        const int sa = cl[static_cast<std::size_t>(bi)].size;
        const int sb = cl[static_cast<std::size_t>(bj)].size;
        out.merges.push_back({cl[static_cast<std::size_t>(bi)].id, cl[static_cast<std::size_t>(bj)].id, best, next_id});
        // new cluster's distances: size-weighted average of the parents'
        std::vector<double> row(cl.size() + 1, 0.0);
        for (int k = 0; k < static_cast<int>(cl.size()); ++k) {
            if (!cl[static_cast<std::size_t>(k)].alive || k == bi || k == bj) continue;
            row[static_cast<std::size_t>(k)] =
                (static_cast<double>(sa) * d_at(bi, k) + static_cast<double>(sb) * d_at(bj, k)) /
                static_cast<double>(sa + sb);
        }
        cl[static_cast<std::size_t>(bi)].alive = false;
        cl[static_cast<std::size_t>(bj)].alive = false;
        const std::size_t n = dist.size();
        for (auto& r : dist) r.push_back(0.0);
        dist.push_back(std::move(row));
        for (std::size_t k = 0; k < n; ++k) dist[k][n] = dist[n][k];
        cl.push_back({next_id, sa + sb, true});
        ++next_id;
    }
    return out;
}

// Per-class mean of pooled anticipated embeddings, then average-linkage
// clustering under L2 distance.
template <typename T>
Dendrogram cluster_objects(HotspotModel<T>& model,
                           const std::vector<std::pair<std::string, std::vector<Tensor<T>>>>& class_images) {
    if (class_images.size() < 2) throw ValueError("cluster_objects: need at least 2 object classes");
    std::vector<std::string> labels;
    std::vector<std::vector<double>> means;
    for (const auto& [label, images] : class_images) {
        if (images.empty()) throw ValueError("cluster_objects: class '" + label + "' has no images");
        std::vector<double> mean;
        for (const auto& img : images) {
            Tensor<T> x = model.encode_frame(nullptr, img);
            Tensor<T> xa = model.anticipate(nullptr, x, false);
            Tensor<T> emb = model.pool(nullptr, xa);
            if (mean.empty()) mean.assign(emb.value().size(), 0.0);
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += static_cast<double>(emb.value()[i]);
        }
        for (auto& v : mean) v /= static_cast<double>(images.size());
        labels.push_back(label);
        means.push_back(std::move(mean));
    }
    const int C = static_cast<int>(labels.size());
    std::vector<std::vector<double>> dist(static_cast<std::size_t>(C), std::vector<double>(static_cast<std::size_t>(C), 0.0));
    for (int i = 0; i < C; ++i)
        for (int j = i + 1; j < C; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < means[static_cast<std::size_t>(i)].size(); ++k) {
                const double d = means[static_cast<std::size_t>(i)][k] - means[static_cast<std::size_t>(j)][k];
                s += d * d;
            }
            dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                dist[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = std::sqrt(s);
        }
    return agglomerate_average_linkage(std::move(dist), std::move(labels));
}

// Indented text rendering of the merge tree, children under parents.
inline std::string render_dendrogram(const Dendrogram& dg) {
    const int C = static_cast<int>(dg.labels.size());
    std::string out;
    std::function<void(int, int)> walk = [&](int id, int depth) {
        for (int i = 0; i < depth; ++i) out += "  ";
        if (id < C) {
            out += dg.labels[static_cast<std::size_t>(id)] + "\n";
            return;
        }
        const auto& m = dg.merges[static_cast<std::size_t>(id - C)];
        char buf[64];
        std::snprintf(buf, sizeof(buf), "merge @ %.6f\n", m.height);
        out += buf;
        walk(m.a, depth + 1);
        walk(m.b, depth + 1);
    };
    if (!dg.merges.empty()) walk(dg.merges.back().id, 0);
    return out;
}

}  // namespace htk
