#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <vector>

#include "htk/net.hpp"
#include "htk/rng.hpp"
#include "htk/tensor.hpp"
#include "htk/train.hpp"

using namespace htk;

namespace {

Tensor<float> randf(Rng& rng, Shape shape, float stdev = 0.5f) {
    std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<float>(rng.normal()) * stdev;
    return Tensor<float>(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("encoder geometry across input sizes and widths") {
    for (int d : {8, 32}) {
        EncoderConfig enc = default_encoder(d, true);
        REQUIRE(enc.stages.size() == 5);
        CHECK(enc.stages[0].out_channels == d / 2);
        for (std::size_t s = 1; s < 5; ++s) CHECK(enc.stages[s].out_channels == d);
        CHECK(enc.stages[3].dilation == 2);
        CHECK(enc.stages[4].dilation == 4);
        CHECK(enc.out_channels() == d);
        CHECK(enc.out_extent(32) == 4);
        CHECK(enc.out_extent(64) == 8);
        CHECK(enc.out_extent(112) == 14);
    }
    EncoderConfig basic = default_encoder(16, false);
    for (const auto& s : basic.stages) {
        CHECK(s.stride == 2);
        CHECK(s.dilation == 1);
    }
    CHECK(basic.out_extent(64) == 2);

    CHECK_THROWS_AS(default_encoder(7, true), ValueError);
    CHECK_THROWS_AS(default_encoder(0, true), ValueError);
}

TEST_CASE("model forward shapes") {
    Rng rng(31);
    for (int size : {32, 64}) {
        HotspotModel<float> model(default_encoder(8, true), {"grasp", "twist", "press"}, {"a", "b"}, true,
                                  rng);
        const int n = model.cfg.out_extent(size);
        Tensor<float> img = randf(rng, {3, size, size});
        Tensor<float> feat = model.encode_frame(nullptr, img);
        CHECK(feat.shape() == Shape{8, n, n});
        for (float v : feat.value()) CHECK(v >= 0.0f);  // final stage ends in relu

        std::vector<Tensor<float>> frames{img, randf(rng, {3, size, size}),
                                          randf(rng, {3, size, size})};
        StepOutputs<float> out = model.forward_video(nullptr, frames);
        REQUIRE(out.y.size() == 3);
        REQUIRE(out.g.size() == 3);
        CHECK(out.y[0].shape() == Shape{3});
        CHECK(out.g[0].shape() == Shape{8});
        CHECK(out.h_star.value() == out.h.back().value());

        Tensor<float> x_I = model.encode_frame(nullptr, img);
        Tensor<float> yi = model.forward_inactive(nullptr, x_I, false);
        CHECK(yi.shape() == Shape{3});
    }
    CHECK_THROWS_AS(HotspotModel<float>(default_encoder(8, true), {}, {"a"}, true, rng), ValueError);
}

TEST_CASE("anticipation module initialized as identity is transparent") {
    Rng rng(17);
    HotspotModel<float> model(default_encoder(8, true), {"x", "y", "z"}, {"o"}, true, rng);

    // zero both conv kernels except a center tap on the matching channel
    for (ConvLayer<float>* conv : {&model.ant_conv1, &model.ant_conv2}) {
        auto& w = conv->w.value();
        std::fill(w.begin(), w.end(), 0.0f);
        const int d = model.feature_channels();
        for (int c = 0; c < d; ++c) w[static_cast<std::size_t>(((c * d + c) * 3 + 1) * 3 + 1)] = 1.0f;
        std::fill(conv->b.value().begin(), conv->b.value().end(), 0.0f);
    }
    // affine (1, 0) with fresh running stats: eval-mode batchnorm is near identity

    Tensor<float> img = randf(rng, {3, 32, 32});
    Tensor<float> x_I = model.encode_frame(nullptr, img);
    Tensor<float> y_inactive = model.forward_inactive(nullptr, x_I, false);
    StepOutputs<float> ref = model.forward_video(nullptr, {img});

    REQUIRE(y_inactive.shape() == ref.y[0].shape());
    for (std::size_t i = 0; i < y_inactive.value().size(); ++i)
        CHECK(y_inactive.value()[i] ==
              doctest::Approx(ref.y[0].value()[i]).epsilon(1e-3).scale(1.0));
}

TEST_CASE("anticipation module gradient check") {
    Rng rng(23);
    HotspotModel<double> model(default_encoder(4, true), {"a", "b"}, {"o"}, true, rng);
    Tensor<double> x0 = [&] {
        std::vector<double> v(4 * 3 * 3);
        for (auto& x : v) x = std::abs(rng.normal());
        return Tensor<double>(Shape{4, 3, 3}, v);
    }();
    auto rep = grad_check<double>(
        [&](Tape<double>* t, const Tensor<double>& x) {
            Tensor<double> a = model.anticipate(t, x, true);
            std::vector<double> wv(a.value().size());
            Rng r(5);
            for (auto& v : wv) v = r.normal();
            return sum_all(t, mul(t, a, Tensor<double>(a.shape(), wv)));
        },
        x0);
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("every parameter receives gradient from the combined loss") {
    Rng rng(41);
    HotspotModel<float> model(default_encoder(8, true), {"g", "t", "p"}, {"o1", "o2"}, true, rng);

    std::vector<TrainItem<float>> items(2);
    for (int i = 0; i < 2; ++i) {
        for (int t = 0; t < 3; ++t) items[i].frames.push_back(randf(rng, {3, 32, 32}));
        items[i].inactive = randf(rng, {3, 32, 32});
        items[i].action = i;
        items[i].object = i;
        items[i].id = "item" + std::to_string(i);
    }
    LossWeights w;  // cls 1, ant 0.1, aux 1
    Rng trng(3);
    model.zero_grad();
    train_batch(model, {&items[0], &items[1]}, w, AntMode::L2, 0.5f, trng);

    std::set<std::string> names;
    model.for_each_param([&](const std::string& name, Tensor<float>& p) {
        CHECK(names.insert(name).second);
        REQUIRE_MESSAGE(p.has_grad(), name);
        float mx = 0.0f;
        for (float g : p.grad()) mx = std::max(mx, std::abs(g));
        CHECK_MESSAGE(mx > 0.0f, name);
    });
    CHECK(names.size() == 23);

    int buffers = 0;
    model.for_each_buffer([&](const std::string&, std::vector<float>&) { buffers++; });
    CHECK(buffers == 4);
}

TEST_CASE("video order changes the prediction") {
    Rng rng(53);
    HotspotModel<float> model(default_encoder(8, true), {"a", "b", "c"}, {"o"}, true, rng);
    std::vector<Tensor<float>> fw;
    for (int t = 0; t < 4; ++t) fw.push_back(randf(rng, {3, 32, 32}));
    std::vector<Tensor<float>> bw(fw.rbegin(), fw.rend());
    auto yf = model.forward_video(nullptr, fw).y.back();
    auto yb = model.forward_video(nullptr, bw).y.back();
    double diff = 0.0;
    for (std::size_t i = 0; i < yf.value().size(); ++i)
        diff = std::max(diff, std::abs(static_cast<double>(yf.value()[i]) - yb.value()[i]));
    CHECK(diff > 1e-6);
}

TEST_CASE("initialization and forward are deterministic") {
    auto build = [] {
        Rng rng(77);
        return HotspotModel<float>(default_encoder(8, true), {"a", "b"}, {"o"}, true, rng);
    };
    HotspotModel<float> m1 = build();
    HotspotModel<float> m2 = build();
    bool same = true;
    std::vector<std::vector<float>> p1, p2;
    m1.for_each_param([&](const std::string&, Tensor<float>& p) { p1.push_back(p.value()); });
    m2.for_each_param([&](const std::string&, Tensor<float>& p) { p2.push_back(p.value()); });
    CHECK(p1 == p2);

    Rng rng(78);
    Tensor<float> img = randf(rng, {3, 32, 32});
    CHECK(m1.forward_inactive(nullptr, m1.encode_frame(nullptr, img), false).value() ==
          m2.forward_inactive(nullptr, m2.encode_frame(nullptr, img), false).value());
    (void)same;
}

TEST_CASE("finiteness guard") {
    Rng rng(99);
    HotspotModel<float> model(default_encoder(8, true), {"a", "b"}, {"o"}, true, rng);
    CHECK(model.all_finite());
    model.classifier.b.value()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(model.all_finite());
}

TEST_CASE("image-to-heatmap model shapes and trainability") {
    Rng rng(111);
    Img2HeatmapModel<float> model(3, rng);
    Tensor<float> img = randf(rng, {3, 64, 64});
    Tensor<float> probs = model.forward(nullptr, img);
    CHECK(probs.shape() == Shape{3, 64, 64});
    for (float v : probs.value()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    Tensor<float> probs32 = model.forward(nullptr, randf(rng, {3, 32, 32}));
    CHECK(probs32.shape() == Shape{3, 32, 32});

    // a training step moves the output toward the target
    std::vector<float> target(3 * 64 * 64, 0.0f);
    for (int i = 0; i < 64 * 64; ++i) target[static_cast<std::size_t>(i)] = 1.0f;  // action 0 everywhere
    Adam<float> opt(1e-2f, 0.0f);
    auto params = collect_params<float>(model);
    double before = 0.0, after = 0.0;
    for (int step = 0; step < 5; ++step) {
        model.zero_grad();
        Tape<float> tape;
        Tensor<float> logits = model.forward_logits(&tape, img);
        Tensor<float> loss = sigmoid_bce_mean(&tape, logits, target);
        if (step == 0) before = loss.item();
        after = loss.item();
        tape.backward(loss);
        opt.step(params);
    }
    CHECK(after < before);
}
