#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "hazelab/can.hpp"
#include "hazelab/can_train.hpp"
#include "hazelab/loss.hpp"
#include "test_support.hpp"

using namespace hazelab;
namespace fs = std::filesystem;

namespace {

CanConfig tiny_config(int blocks, int width) {
    CanConfig cfg;
    cfg.blocks = blocks;
    cfg.width = width;
    cfg.dilations.clear();
    for (int b = 0; b < blocks; ++b) cfg.dilations.push_back(1 << b);
    return cfg;
}

}  // namespace

TEST_CASE("forward preserves spatial resolution") {
    CanModel model = CanModel::build(tiny_config(2, 4));
    model.init_random(1, 0.1);
    for (auto [h, w] : {std::pair{5, 9}, {16, 16}, {7, 3}}) {
        std::mt19937_64 rng(h * 100 + w);
        const RgbImage img = oracle::random_image(h, w, rng);
        const ScalarMap t = can_forward(model, img, CanMode::inference);
        CHECK(t.height() == h);
        CHECK(t.width() == w);
    }
}

TEST_CASE("zero weights propagate only the output bias") {
    CanModel model = CanModel::build(tiny_config(2, 3));
    model.at("out.b").v[0] = 0.7;
    std::mt19937_64 rng(71);
    const RgbImage img = oracle::random_image(6, 8, rng);
    for (CanMode mode : {CanMode::inference, CanMode::train}) {
        const ScalarMap t = can_forward(model, img, mode);
        for (double v : t.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
    }
}

TEST_CASE("default config receptive field is 151") {
    CHECK(CanConfig{}.receptive_field() == 151);
}

TEST_CASE("perturbation footprint matches the receptive-field formula") {
    const CanConfig cfg = tiny_config(2, 2);
    const int rf = cfg.receptive_field();
    CHECK(rf == 15);

    CanModel model = CanModel::build(cfg);
    // positive weights, identity-like BN, so mass spreads exactly one
    // receptive field from a unit impulse
    for (Tensor& t : model.params)
        if (t.name.ends_with(".w"))
            for (double& v : t.v) v = 0.1;

    const int side = 41, center = side / 2;
    RgbImage img(side, side, 0.0);
    for (int c = 0; c < 3; ++c) img.at(center, center, c) = 1.0;
    const ScalarMap out = can_forward(model, img, CanMode::inference);

    const int r = rf / 2;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const bool inside = std::abs(y - center) <= r && std::abs(x - center) <= r;
            if (inside) CHECK(out.at(y, x) > 0.0);
            else CHECK(out.at(y, x) == 0.0);
        }
}

TEST_CASE("config validation") {
    CanConfig cfg = tiny_config(2, 4);
    cfg.kernel = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config(2, 4);
    cfg.dilations = {1};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config(2, 4);
    cfg.dilations = {1, 0};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("backward with zero upstream yields zero gradients; scaling is linear") {
    const CanConfig cfg = tiny_config(1, 2);
    CanModel model = CanModel::build(cfg);
    model.init_random(5, 0.3);
    std::mt19937_64 rng(72);
    const RgbImage img = oracle::random_image(6, 6, rng);

    ForwardCache cache;
    can_forward(model, img, CanMode::train, &cache);

    const ScalarMap zero(6, 6, 0.0);
    for (const Tensor& g : can_backward(model, cache, zero))
        for (double v : g.v) CHECK(v == 0.0);

    const ScalarMap up = oracle::random_map(6, 6, rng, -1.0, 1.0);
    ScalarMap up2 = up;
    for (double& v : up2.data()) v *= 2.0;
    const std::vector<Tensor> g1 = can_backward(model, cache, up);
    const std::vector<Tensor> g2 = can_backward(model, cache, up2);
    for (std::size_t p = 0; p < g1.size(); ++p)
        for (std::size_t i = 0; i < g1[p].size(); ++i)
            CHECK(g2[p].v[i] == doctest::Approx(2.0 * g1[p].v[i]).epsilon(1e-12));
}

TEST_CASE("backward requires a forward cache") {
    CanModel model = CanModel::build(tiny_config(1, 2));
    ForwardCache cache;
    CHECK_THROWS_AS(can_backward(model, cache, ScalarMap(4, 4, 0.0)), std::invalid_argument);
}

TEST_CASE("parameter gradients match finite differences of the true loss") {
    const CanConfig cfg = tiny_config(1, 2);
    CanModel model = CanModel::build(cfg);
    model.init_random(9, 0.3);
    std::mt19937_64 rng(73);
    const RgbImage img = oracle::random_image(6, 6, rng);
    const LossContext ctx = build_loss_context(img);

    ForwardCache cache;
    const ScalarMap t = can_forward(model, img, CanMode::train, &cache);
    const ScalarMap upstream = energy_gradient(ctx, t);
    const std::vector<Tensor> grads = can_backward(model, cache, upstream);

    auto loss_of = [&]() {
        return energy(ctx, can_forward(model, img, CanMode::train));
    };

    const double h = 1e-5;  // BN makes the loss curved enough that 1e-3 is too coarse
    for (std::size_t p = 0; p < model.params.size(); ++p) {
        if (!model.is_trainable(p)) continue;
        for (std::size_t i = 0; i < model.params[p].size(); ++i) {
            const double orig = model.params[p].v[i];
            model.params[p].v[i] = orig + h;
            const double ep = loss_of();
            model.params[p].v[i] = orig - h;
            const double em = loss_of();
            model.params[p].v[i] = orig;
            const double fd = (ep - em) / (2.0 * h);
            const double scale = std::max({std::abs(fd), std::abs(grads[p].v[i]), 1e-6});
            CHECK(std::abs(grads[p].v[i] - fd) / scale <= 1e-3);
        }
    }
}

TEST_CASE("inference forward is bitwise deterministic") {
    CanModel model = CanModel::build(tiny_config(2, 4));
    model.init_random(3, 0.2);
    std::mt19937_64 rng(74);
    const RgbImage img = oracle::random_image(12, 12, rng);
    const ScalarMap a = can_forward(model, img, CanMode::inference);
    const ScalarMap b = can_forward(model, img, CanMode::inference);
    CHECK(a.data() == b.data());
}

TEST_CASE("model save/load round trip is bitwise identical") {
    CanModel model = CanModel::build(tiny_config(2, 3));
    model.init_random(11, 0.3);
    const fs::path p1 = fs::temp_directory_path() / "hazelab_model_a.ddcp";
    const fs::path p2 = fs::temp_directory_path() / "hazelab_model_b.ddcp";
    save_model(model, p1.string());
    CanModel loaded = load_model(p1.string());
    save_model(loaded, p2.string());

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK_FALSE(b1.empty());
    CHECK(loaded.cfg.dilations == model.cfg.dilations);
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("load_model rejects garbage") {
    const fs::path p = fs::temp_directory_path() / "hazelab_model_bad.ddcp";
    std::ofstream(p, std::ios::binary) << "nope";
    CHECK_THROWS(load_model(p.string()));
    fs::remove(p);
}

TEST_CASE("training with lr = 0 is a fixed point") {
    std::mt19937_64 rng(75);
    std::vector<RgbImage> corpus = {oracle::random_image(12, 12, rng)};
    TrainConfig tc;
    tc.lr = 0.0;
    tc.epochs = 1;
    tc.batch_size = 1;
    tc.seed = 42;
    const CanConfig cfg = tiny_config(1, 2);

    CanModel init = CanModel::build(cfg);
    init.init_random(tc.seed, tc.init_std);
    auto [trained, history] = can_train(corpus, cfg, tc);

    for (std::size_t p = 0; p < init.params.size(); ++p) {
        if (!trained.is_trainable(p)) continue;  // BN running stats do update
        CHECK(trained.params[p].v == init.params[p].v);
    }
    // reported loss equals the init model's loss
    const LossContext ctx = build_loss_context(corpus[0]);
    const double expect = energy(ctx, can_forward(init, corpus[0], CanMode::train));
    CHECK(history.size() == 1);
    CHECK(history[0].avg_loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("training is bitwise deterministic under a fixed seed") {
    std::mt19937_64 rng(76);
    std::vector<RgbImage> corpus;
    for (int i = 0; i < 3; ++i) corpus.push_back(oracle::random_image(12, 12, rng));
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.epochs = 3;
    tc.batch_size = 2;
    tc.seed = 7;
    const CanConfig cfg = tiny_config(1, 2);

    auto [m1, h1] = can_train(corpus, cfg, tc);
    auto [m2, h2] = can_train(corpus, cfg, tc);
    REQUIRE(h1.size() == h2.size());
    for (std::size_t e = 0; e < h1.size(); ++e) CHECK(h1[e].avg_loss == h2[e].avg_loss);
    for (std::size_t p = 0; p < m1.params.size(); ++p) CHECK(m1.params[p].v == m2.params[p].v);
}

TEST_CASE("training rejects an empty corpus") {
    CHECK_THROWS_AS(can_train({}, tiny_config(1, 2), TrainConfig{}), TrainError);
}

TEST_CASE("augment yields four 128x128 variants") {
    std::mt19937_64 rng(77);
    for (auto [h, w] : {std::pair{300, 400}, {128, 128}, {64, 80}}) {
        const RgbImage img = oracle::random_image(h, w, rng);
        const std::vector<RgbImage> variants = augment(img, rng);
        CHECK(variants.size() == 4);
        for (const RgbImage& v : variants) {
            CHECK(v.height() == 128);
            CHECK(v.width() == 128);
        }
    }
}

TEST_CASE("first augmentation variant is the plain resize") {
    std::mt19937_64 rng(78);
    const RgbImage img = oracle::random_image(200, 200, rng);
    const RgbImage resized = detail_aug::resize_bilinear(img, 128, 128);
    const std::vector<RgbImage> variants = augment(img, rng);
    CHECK(variants[0].data() == resized.data());
}

TEST_CASE("bilinear resize preserves a constant image and the value range") {
    const RgbImage flat(37, 53, 0.63);
    const RgbImage rs = detail_aug::resize_bilinear(flat, 128, 128);
    for (double v : rs.data()) CHECK(v == doctest::Approx(0.63).epsilon(1e-12));

    std::mt19937_64 rng(82);
    const RgbImage img = oracle::random_image(90, 70, rng);
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    for (double v : detail_aug::resize_bilinear(img, 128, 128).data()) {
        CHECK(v >= *lo - 1e-12);
        CHECK(v <= *hi + 1e-12);
    }
}

TEST_CASE("rotation by 90 degrees is an exact index permutation") {
    std::mt19937_64 rng(79);
    const RgbImage img = oracle::random_image(32, 32, rng);
    const RgbImage rot = detail_aug::rotate90(img);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            for (int c = 0; c < 3; ++c)
                CHECK(rot.at(31 - x, y, c) == img.at(y, x, c));
}

TEST_CASE("predict_and_dehaze with identity transmission returns the input") {
    CanModel model = CanModel::build(tiny_config(1, 2));
    model.at("out.b").v[0] = 1.0;  // t == 1 everywhere
    std::mt19937_64 rng(80);
    const RgbImage img = oracle::random_image(16, 16, rng);
    const RgbImage out = predict_and_dehaze(model, img, {});
    for (std::size_t i = 0; i < img.data().size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-9));
}

TEST_CASE("reconstruction stays finite for arbitrary model output") {
    CanModel model = CanModel::build(tiny_config(1, 2));
    model.at("out.b").v[0] = -5.0;  // t clamped at t0 before the division
    std::mt19937_64 rng(81);
    const RgbImage img = oracle::random_image(16, 16, rng);
    const RgbImage out = predict_and_dehaze(model, img, {});
    for (double v : out.data()) CHECK(std::isfinite(v));
}
