#pragma once

// The hotspot network: frame encoder, pooled LSTM aggregator, linear action
// classifier, and the anticipation module, plus the supervised image-to-
// heatmap baseline net. Parameter iteration is ordered and named so the
// optimizer and checkpoints stay aligned.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "htk/common.hpp"
#include "htk/rng.hpp"
#include "htk/tensor.hpp"

namespace htk {

struct StageSpec {
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
    int padding = 1;
};

struct EncoderConfig {
    int in_channels = 3;
    std::vector<StageSpec> stages;

    int out_channels() const { return stages.empty() ? in_channels : stages.back().out_channels; }

    int out_extent(int in) const {
        for (const auto& s : stages) in = conv_out_extent(in, s.kernel, s.stride, s.padding, s.dilation);
        return in;
    }
};

// Three downsampling stages, then two unit-stride stages. With dilation the
// last two stages preserve resolution (64 -> 8); without it they keep
// downsampling (64 -> 2), the low resolution baseline.
inline EncoderConfig default_encoder(int d, bool dilated) {
    if (d < 2 || d % 2 != 0) throw ValueError("default_encoder: d must be even and >= 2");
    EncoderConfig cfg;
    cfg.in_channels = 3;
    const int half = d / 2;
    if (dilated) {
        cfg.stages = {
            {half, 3, 2, 1, 1}, {d, 3, 2, 1, 1}, {d, 3, 2, 1, 1}, {d, 3, 1, 2, 2}, {d, 3, 1, 4, 4},
        };
    } else {
        cfg.stages = {
            {half, 3, 2, 1, 1}, {d, 3, 2, 1, 1}, {d, 3, 2, 1, 1}, {d, 3, 2, 1, 1}, {d, 3, 2, 1, 1},
        };
    }
    return cfg;
}

template <typename T>
struct ConvLayer {
    Tensor<T> w, b;
    int stride = 1, dilation = 1, padding = 1;
};

template <typename T>
struct BnLayer {
    Tensor<T> gamma, beta;
    BatchNormStats<T> stats;
    bool warned_cold = false;
};

template <typename T>
struct LstmLayer {
    Tensor<T> Wx, Wh, b;
};

template <typename T>
struct LinearLayer {
    Tensor<T> W, b;
};

template <typename T>
struct StepOutputs {
    std::vector<Tensor<T>> g;  // pooled per-frame features
    std::vector<Tensor<T>> h;  // hidden states
    std::vector<Tensor<T>> y;  // per-step logits
    Tensor<T> h_star;          // == h.back()
};

namespace detail {

template <typename T>
Tensor<T> randn(Rng& rng, Shape shape, T stdev) {
    std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(rng.normal()) * stdev;
    return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
ConvLayer<T> make_conv(Rng& rng, int cin, int cout, int k, int stride, int dilation, int padding) {
    ConvLayer<T> l;
    const T stdev = std::sqrt(T(2) / static_cast<T>(cin * k * k));
    l.w = randn<T>(rng, Shape{cout, cin, k, k}, stdev);
    l.b = Tensor<T>::zeros(Shape{cout}, true);
    l.stride = stride;
    l.dilation = dilation;
    l.padding = padding;
    return l;
}

}  // namespace detail

template <typename T>
class HotspotModel {
public:
    EncoderConfig cfg;
    std::vector<ConvLayer<T>> encoder;
    LstmLayer<T> lstm;
    LinearLayer<T> classifier;
    ConvLayer<T> ant_conv1, ant_conv2;
    BnLayer<T> ant_bn1, ant_bn2;
    std::vector<std::string> actions;
    std::vector<std::string> objects;
    bool use_l2_pool = true;
    bool l2_pool_count_norm = false;

    HotspotModel() = default;

    HotspotModel(EncoderConfig config, std::vector<std::string> action_vocab,
                 std::vector<std::string> object_vocab, bool l2pool, Rng& rng)
        : cfg(std::move(config)), actions(std::move(action_vocab)), objects(std::move(object_vocab)),
          use_l2_pool(l2pool) {
        if (actions.empty()) throw ValueError("model needs a nonempty action vocabulary");
        int cin = cfg.in_channels;
        for (const auto& s : cfg.stages) {
            encoder.push_back(detail::make_conv<T>(rng, cin, s.out_channels, s.kernel, s.stride, s.dilation,
                                                   s.padding));
            cin = s.out_channels;
        }
        const int d = cfg.out_channels();
        const int K = static_cast<int>(actions.size());
        const T lstm_std = std::sqrt(T(1) / static_cast<T>(d));
        // Input rows are scaled well below 1/sqrt(d): sum-form L2 pooling hands
        // the LSTM all-positive vectors whose norm grows with the map area and
        // whose direction barely moves frame to frame, so same-sign cell
        // updates compound across the clip. Keeping gate pre-activations small
        // at the start leaves tanh(c) unsaturated and, because features grow
        // during training until pre-activations reach working range, also
        // keeps the final embedding scale low enough for the anticipation
        // blocks (whose output scale is pinned by their batchnorm gain) to
        // reach it.
        lstm.Wx = detail::randn<T>(rng, Shape{4 * d, d}, T(1.9) / static_cast<T>(d));
        lstm.Wh = detail::randn<T>(rng, Shape{4 * d, d}, lstm_std);
        lstm.b = Tensor<T>::zeros(Shape{4 * d}, true);
        // forget gate bias 1 so early memory survives
        for (int j = 0; j < d; ++j) lstm.b.value()[static_cast<std::size_t>(d + j)] = T(1);
        classifier.W = detail::randn<T>(rng, Shape{K, d}, lstm_std);
        classifier.b = Tensor<T>::zeros(Shape{K}, true);
        ant_conv1 = detail::make_conv<T>(rng, d, d, 3, 1, 1, 1);
        ant_conv2 = detail::make_conv<T>(rng, d, d, 3, 1, 1, 1);
        ant_bn1.gamma = Tensor<T>::full(Shape{d}, T(1), true);
        ant_bn1.beta = Tensor<T>::zeros(Shape{d}, true);
        ant_bn1.stats = BatchNormStats<T>(d);
        // The normalization in the second block pins the module's output scale
        // to this gain, and the optimizer can only move it a fraction per
        // epoch, so start it near where the pooled clip embeddings settle
        // once training finds its working range (see the Wx note above).
        ant_bn2.gamma = Tensor<T>::full(Shape{d}, T(0.8), true);
        ant_bn2.beta = Tensor<T>::zeros(Shape{d}, true);
        ant_bn2.stats = BatchNormStats<T>(d);
    }

    int feature_channels() const { return cfg.out_channels(); }
    int num_actions() const { return static_cast<int>(actions.size()); }

    Tensor<T> encode_frame(Tape<T>* tape, const Tensor<T>& image) const {
        if (image.rank() != 3 || image.dim(0) != cfg.in_channels)
            throw ShapeError("encode_frame: expected image[" + std::to_string(cfg.in_channels) + ",H,W], got " +
                             shape_str(image.shape()));
        Tensor<T> x = image;
        for (const auto& l : encoder) {
            x = conv2d(tape, x, l.w, l.b, l.stride, l.padding, l.dilation);
            x = relu(tape, x);
        }
        return x;
    }

    Tensor<T> pool(Tape<T>* tape, const Tensor<T>& feat) const {
        return use_l2_pool ? l2_pool_spatial(tape, feat, l2_pool_count_norm) : avg_pool_spatial(tape, feat);
    }

    StepOutputs<T> forward_video(Tape<T>* tape, const std::vector<Tensor<T>>& frames) const {
        if (frames.empty()) throw ValueError("forward_video: empty clip");
        const int d = feature_channels();
        StepOutputs<T> out;
        Tensor<T> h = Tensor<T>::zeros(Shape{d});
        Tensor<T> c = Tensor<T>::zeros(Shape{d});
        for (const auto& frame : frames) {
            Tensor<T> g = pool(tape, encode_frame(tape, frame));
            auto hc = lstm_step(tape, g, h, c, lstm.Wx, lstm.Wh, lstm.b);
            h = hc.h;
            c = hc.c;
            out.g.push_back(std::move(g));
            out.h.push_back(h);
            out.y.push_back(linear(tape, h, classifier.W, classifier.b));
        }
        out.h_star = out.h.back();
        return out;
    }

    Tensor<T> anticipate(Tape<T>* tape, const Tensor<T>& x_I, bool train) {
        const int d = feature_channels();
        if (x_I.rank() != 3 || x_I.dim(0) != d)
            throw ShapeError("anticipate: expected feature[d,n,n], got " + shape_str(x_I.shape()));
        auto block = [&](const Tensor<T>& in, ConvLayer<T>& conv, BnLayer<T>& bn) {
            Tensor<T> y = conv2d(tape, in, conv.w, conv.b, conv.stride, conv.padding, conv.dilation);
            if (!train && bn.stats.updates == 0 && !bn.warned_cold) {
                warn("anticipation batchnorm evaluated before any training update; using init stats");
                bn.warned_cold = true;
            }
            // batchnorm2d wants N,C,H,W; single sample
            Tensor<T> y4 = reshape_nchw(tape, y);
            Tensor<T> z = batchnorm2d(tape, y4, bn.gamma, bn.beta, bn.stats, train);
            Tensor<T> z3 = reshape_chw(tape, z);
            return relu(tape, z3);
        };
        Tensor<T> a = block(x_I, ant_conv1, ant_bn1);
        return block(a, ant_conv2, ant_bn2);
    }

    // y = classifier(lstm_step(P(F_ant(x_I)), zero state)). Pre-softmax.
    Tensor<T> forward_inactive(Tape<T>* tape, const Tensor<T>& x_I, bool train) {
        Tensor<T> xa = anticipate(tape, x_I, train);
        Tensor<T> g = pool(tape, xa);
        const int d = feature_channels();
        auto hc = lstm_step(tape, g, Tensor<T>::zeros(Shape{d}), Tensor<T>::zeros(Shape{d}), lstm.Wx, lstm.Wh,
                            lstm.b);
        return linear(tape, hc.h, classifier.W, classifier.b);
    }

    void for_each_param(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
        for (std::size_t i = 0; i < encoder.size(); ++i) {
            fn("encoder." + std::to_string(i) + ".w", encoder[i].w);
            fn("encoder." + std::to_string(i) + ".b", encoder[i].b);
        }
        fn("lstm.Wx", lstm.Wx);
        fn("lstm.Wh", lstm.Wh);
        fn("lstm.b", lstm.b);
        fn("classifier.W", classifier.W);
        fn("classifier.b", classifier.b);
        fn("ant.conv1.w", ant_conv1.w);
        fn("ant.conv1.b", ant_conv1.b);
        fn("ant.bn1.gamma", ant_bn1.gamma);
        fn("ant.bn1.beta", ant_bn1.beta);
        fn("ant.conv2.w", ant_conv2.w);
        fn("ant.conv2.b", ant_conv2.b);
        fn("ant.bn2.gamma", ant_bn2.gamma);
        fn("ant.bn2.beta", ant_bn2.beta);
    }

    // Non-trainable state that still belongs in checkpoints.
    void for_each_buffer(const std::function<void(const std::string&, std::vector<T>&)>& fn) {
        fn("ant.bn1.running_mean", ant_bn1.stats.mean);
        fn("ant.bn1.running_var", ant_bn1.stats.var);
        fn("ant.bn2.running_mean", ant_bn2.stats.mean);
        fn("ant.bn2.running_var", ant_bn2.stats.var);
    }

    std::int64_t bn_updates() const { return ant_bn1.stats.updates; }
    void set_bn_updates(std::int64_t n) {
        ant_bn1.stats.updates = n;
        ant_bn2.stats.updates = n;
    }

    void zero_grad() {
        for_each_param([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
    }

    bool all_finite() {
        bool ok = true;
        for_each_param([&](const std::string&, Tensor<T>& t) {
            for (T v : t.value())
                if (!std::isfinite(v)) ok = false;
        });
        return ok;
    }

private:
    // Rank changes around batchnorm. Values pass through untouched, and the
    // recorded backward copies the gradient across.
    static Tensor<T> reshape_nchw(Tape<T>* tape, const Tensor<T>& x) {
        const bool rg = tape && x.requires_grad();
        Tensor<T> out(Shape{1, x.dim(0), x.dim(1), x.dim(2)}, x.value(), rg);
        if (rg) {
            auto xi = x.impl(), oi = out.impl();
            tape->record({oi}, [xi, oi]() {
                if (oi->grad.empty() || !xi->requires_grad) return;
                auto& gx = ensure_grad(*xi);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
            });
        }
        return out;
    }

    static Tensor<T> reshape_chw(Tape<T>* tape, const Tensor<T>& x) {
        const bool rg = tape && x.requires_grad();
        Tensor<T> out(Shape{x.dim(1), x.dim(2), x.dim(3)}, x.value(), rg);
        if (rg) {
            auto xi = x.impl(), oi = out.impl();
            tape->record({oi}, [xi, oi]() {
                if (oi->grad.empty() || !xi->requires_grad) return;
                auto& gx = ensure_grad(*xi);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
            });
        }
        return out;
    }
};

// Fully convolutional encoder-decoder that maps an image straight to one
// sigmoid heatmap per action. Downsampling by strided conv, mirrored by
// bilinear upsampling.
template <typename T>
class Img2HeatmapModel {
public:
    int in_channels = 3;
    int num_actions = 0;
    std::vector<ConvLayer<T>> enc;  // stride 2 each
    std::vector<ConvLayer<T>> dec;  // stride 1, each preceded by 2x upsample
    ConvLayer<T> out_conv;          // 1x1 to K channels

    Img2HeatmapModel() = default;

    Img2HeatmapModel(int K, Rng& rng, int base = 8) : num_actions(K) {
        if (K < 1) throw ValueError("img2heatmap needs at least one action");
        const int c1 = base, c2 = base * 2, c3 = base * 4;
        enc.push_back(detail::make_conv<T>(rng, in_channels, c1, 3, 2, 1, 1));
        enc.push_back(detail::make_conv<T>(rng, c1, c2, 3, 2, 1, 1));
        enc.push_back(detail::make_conv<T>(rng, c2, c3, 3, 2, 1, 1));
        dec.push_back(detail::make_conv<T>(rng, c3, c2, 3, 1, 1, 1));
        dec.push_back(detail::make_conv<T>(rng, c2, c1, 3, 1, 1, 1));
        dec.push_back(detail::make_conv<T>(rng, c1, c1, 3, 1, 1, 1));
        out_conv = detail::make_conv<T>(rng, c1, K, 1, 1, 1, 0);
    }

    // Returns pre-sigmoid logits [K,H,W]; apply sigmoid for maps.
    Tensor<T> forward_logits(Tape<T>* tape, const Tensor<T>& image) const {
        if (image.rank() != 3 || image.dim(0) != in_channels)
            throw ShapeError("img2heatmap: expected image[3,H,W], got " + shape_str(image.shape()));
        const int H = image.dim(1), W = image.dim(2);
        std::vector<std::pair<int, int>> sizes;
        Tensor<T> x = image;
        for (const auto& l : enc) {
            sizes.emplace_back(x.dim(1), x.dim(2));
            x = relu(tape, conv2d(tape, x, l.w, l.b, l.stride, l.padding, l.dilation));
        }
        for (std::size_t i = 0; i < dec.size(); ++i) {
            const auto [sh, sw] = sizes[sizes.size() - 1 - i];
            x = bilinear_upsample(tape, x, sh, sw);
            x = relu(tape, conv2d(tape, x, dec[i].w, dec[i].b, dec[i].stride, dec[i].padding, dec[i].dilation));
        }
        Tensor<T> logits = conv2d(tape, x, out_conv.w, out_conv.b, 1, 0, 1);
        if (logits.dim(1) != H || logits.dim(2) != W)
            throw ShapeError("img2heatmap: internal resolution mismatch");
        return logits;
    }

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& image) const {
        return sigmoid(tape, forward_logits(tape, image));
    }

    void for_each_param(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
        for (std::size_t i = 0; i < enc.size(); ++i) {
            fn("enc." + std::to_string(i) + ".w", enc[i].w);
            fn("enc." + std::to_string(i) + ".b", enc[i].b);
        }
        for (std::size_t i = 0; i < dec.size(); ++i) {
            fn("dec." + std::to_string(i) + ".w", dec[i].w);
            fn("dec." + std::to_string(i) + ".b", dec[i].b);
        }
        fn("out.w", out_conv.w);
        fn("out.b", out_conv.b);
    }

    void zero_grad() {
        for_each_param([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
    }
};

}  // namespace htk
