#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hazelab/can.hpp"
#include "hazelab/image.hpp"
#include "hazelab/loss.hpp"
#include "hazelab/metrics.hpp"

namespace hazelab {

struct TrainConfig {
    int batch_size = 24;
    double lr = 3e-4;
    double lr_decay = 0.96;
    int decay_epochs = 3;
    int epochs = 30;
    std::uint64_t seed = 0;
    double init_std = std::sqrt(0.1);  // zero-mean init with variance 0.1
    double bn_momentum = 0.99;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (!(lr > 0.0) && lr != 0.0) throw std::invalid_argument("TrainConfig: lr must be >= 0");
        if (!(lr_decay > 0.0) || lr_decay > 1.0)
            throw std::invalid_argument("TrainConfig: lr_decay must be in (0,1]");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    }
};

struct EpochMetrics {
    int epoch = 0;
    double avg_loss = 0.0;
    double val_psnr = 0.0;   // 0 when no validation set given
    double val_ssim = 0.0;
};

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Standard Adam with decay 0.9/0.999, epsilon 1e-8.
class Adam {
public:
    explicit Adam(const CanModel& model) {
        for (const Tensor& t : model.params) {
            m_.emplace_back(t.name, t.dims);
            v_.emplace_back(t.name, t.dims);
        }
    }

    void step(CanModel& model, const std::vector<Tensor>& grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t p = 0; p < model.params.size(); ++p) {
            if (!model.is_trainable(p)) continue;
            Tensor& theta = model.params[p];
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double g = grads[p].v[i];
                m_[p].v[i] = beta1_ * m_[p].v[i] + (1.0 - beta1_) * g;
                v_[p].v[i] = beta2_ * v_[p].v[i] + (1.0 - beta2_) * g * g;
                theta.v[i] -= lr * (m_[p].v[i] / bc1) / (std::sqrt(v_[p].v[i] / bc2) + eps_);
            }
        }
    }

private:
    std::vector<Tensor> m_, v_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
};

namespace detail_aug {

inline RgbImage resize_bilinear(const RgbImage& img, int oh, int ow) {
    RgbImage out(oh, ow);
    const double sy = static_cast<double>(img.height()) / oh;
    const double sx = static_cast<double>(img.width()) / ow;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
            const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            const int y1 = std::min(y0 + 1, img.height() - 1);
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const double wy = fy - y0, wx = fx - x0;
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                                  wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
        }
    return out;
}

inline RgbImage flip_horizontal(const RgbImage& img) {
    RgbImage out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
    return out;
}

// Exact index permutation, 90 degrees counter-clockwise.
inline RgbImage rotate90(const RgbImage& img) {
    RgbImage out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c)
                out.at(img.width() - 1 - x, y, c) = img.at(y, x, c);
    return out;
}

// Rotation by an arbitrary angle keeping the valid axis-aligned center square,
// bilinear sampling.
inline RgbImage rotate_center(const RgbImage& img, double degrees) {
    const double th = degrees * M_PI / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const int side = static_cast<int>(
        std::floor(std::min(img.height(), img.width()) / (std::abs(c) + std::abs(s))));
    const double cy = (img.height() - 1) / 2.0, cx = (img.width() - 1) / 2.0;
    RgbImage out(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double u = y - (side - 1) / 2.0;
            const double v = x - (side - 1) / 2.0;
            const double fy = std::clamp(c * u - s * v + cy, 0.0, img.height() - 1.0);
            const double fx = std::clamp(s * u + c * v + cx, 0.0, img.width() - 1.0);
            const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            const int y1 = std::min(y0 + 1, img.height() - 1);
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const double wy = fy - y0, wx = fx - x0;
            for (int ch = 0; ch < 3; ++ch)
                out.at(y, x, ch) =
                    (1 - wy) * ((1 - wx) * img.at(y0, x0, ch) + wx * img.at(y0, x1, ch)) +
                    wy * ((1 - wx) * img.at(y1, x0, ch) + wx * img.at(y1, x1, ch));
        }
    return out;
}

inline RgbImage crop(const RgbImage& img, int y0, int x0, int side) {
    RgbImage out(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

}  // namespace detail_aug

// Four 128x128 training variants: a plain bilinear resize, plus three random
// flip / crop (256 or 512) / rotate {0,45,90,135} combinations. Images too
// small to crop keep their full extent for the random variants.
inline std::vector<RgbImage> augment(const RgbImage& img, std::mt19937_64& rng) {
    using namespace detail_aug;
    std::vector<RgbImage> out;
    out.push_back(resize_bilinear(img, 128, 128));

    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> rot_pick(0, 3);
    const double angles[4] = {0.0, 45.0, 90.0, 135.0};

    for (int v = 0; v < 3; ++v) {
        RgbImage work = img;
        if (coin(rng)) work = flip_horizontal(work);

        const int want = coin(rng) ? 512 : 256;
        const int side = std::min({want, work.height(), work.width()});
        if (side >= 128 && (side < work.height() || side < work.width())) {
            std::uniform_int_distribution<int> oy(0, work.height() - side);
            std::uniform_int_distribution<int> ox(0, work.width() - side);
            work = crop(work, oy(rng), ox(rng), side);
        }

        const double angle = angles[rot_pick(rng)];
        if (angle == 90.0) work = rotate90(work);
        else if (angle == 45.0 || angle == 135.0) work = rotate_center(work, angle);

        out.push_back(resize_bilinear(work, 128, 128));
    }
    return out;
}

// Unsupervised training: Adam on mini-batches of the corpus-averaged DCP
// energy. Loss contexts (W, t~, A) are computed once per image and never
// change. Deterministic under a fixed seed.
inline std::pair<CanModel, std::vector<EpochMetrics>> can_train(
    const std::vector<RgbImage>& corpus, const CanConfig& can_cfg, const TrainConfig& train_cfg,
    const DcpParams& dcp = {},
    const std::vector<std::pair<RgbImage, RgbImage>>* val_pairs = nullptr) {
    train_cfg.validate();
    if (corpus.empty()) throw TrainError("empty training corpus");

    std::vector<LossContext> contexts;
    contexts.reserve(corpus.size());
    for (const RgbImage& img : corpus) contexts.push_back(build_loss_context(img, dcp));

    CanModel model = CanModel::build(can_cfg);
    model.init_random(train_cfg.seed, train_cfg.init_std);
    Adam opt(model);
    std::mt19937_64 rng(train_cfg.seed ^ 0x9e3779b97f4a7c15ull);

    std::vector<EpochMetrics> history;
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        const double lr = train_cfg.lr * std::pow(train_cfg.lr_decay, epoch / train_cfg.decay_epochs);
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + train_cfg.batch_size);
            std::vector<Tensor> batch_grads;
            for (const Tensor& t : model.params) batch_grads.emplace_back(t.name, t.dims);

            for (std::size_t b = start; b < end; ++b) {
                const std::size_t m = order[b];
                ForwardCache cache;
                const ScalarMap t = can_forward(model, corpus[m], CanMode::train, &cache,
                                                train_cfg.bn_momentum);
                const double e = energy(contexts[m], t);
                if (!std::isfinite(e))
                    throw TrainError("non-finite loss on training image #" + std::to_string(m));
                loss_sum += e;
                ++seen;

                const ScalarMap upstream = energy_gradient(contexts[m], t);
                const std::vector<Tensor> grads = can_backward(model, cache, upstream);
                const double w = 1.0 / static_cast<double>(end - start);
                for (std::size_t p = 0; p < grads.size(); ++p)
                    for (std::size_t i = 0; i < grads[p].size(); ++i)
                        batch_grads[p].v[i] += w * grads[p].v[i];
            }
            if (lr > 0.0) opt.step(model, batch_grads, lr);
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.avg_loss = loss_sum / static_cast<double>(seen);
        if (val_pairs && !val_pairs->empty()) {
            double psnr_sum = 0.0, ssim_sum = 0.0;
            for (const auto& [hazy, clear] : *val_pairs) {
                const RgbImage dehazed = predict_and_dehaze(model, hazy, dcp);
                RgbImage clamped = dehazed;
                for (double& x : clamped.data()) x = std::clamp(x, 0.0, 1.0);
                psnr_sum += psnr(clamped, clear);
                ssim_sum += ssim(clamped, clear);
            }
            em.val_psnr = psnr_sum / static_cast<double>(val_pairs->size());
            em.val_ssim = ssim_sum / static_cast<double>(val_pairs->size());
        }
        history.push_back(em);
    }
    return {std::move(model), std::move(history)};
}

}  // namespace hazelab
