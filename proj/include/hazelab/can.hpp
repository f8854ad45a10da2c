#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hazelab/dcp.hpp"
#include "hazelab/image.hpp"

namespace hazelab {

// Dilated residual context-aggregation network configuration.
struct CanConfig {
    int blocks = 6;
    int width = 32;
    int kernel = 3;
    std::vector<int> dilations = {1, 2, 4, 8, 16, 32};

    void validate() const {
        if (blocks < 1) throw std::invalid_argument("CanConfig: blocks must be >= 1");
        if (width < 1) throw std::invalid_argument("CanConfig: width must be >= 1");
        if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("CanConfig: kernel must be odd");
        if (static_cast<int>(dilations.size()) != blocks)
            throw std::invalid_argument("CanConfig: dilations length must equal blocks");
        for (int d : dilations)
            if (d < 1) throw std::invalid_argument("CanConfig: dilations must be positive");
    }

    // Receptive field side: 1 + sum over conv layers of (kernel-1)*dilation.
    int receptive_field() const {
        int rf = 1;  // the 1x1 lift and 1x1 projection add nothing
        for (int d : dilations) rf += (kernel - 1) * (1 + 1 + d);  // two regular + one dilated
        return rf;
    }
};

struct Tensor {
    std::string name;
    std::vector<int> dims;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::string n, std::vector<int> d) : name(std::move(n)), dims(std::move(d)) {
        std::size_t sz = 1;
        for (int x : dims) sz *= static_cast<std::size_t>(x);
        v.assign(sz, 0.0);
    }
    std::size_t size() const { return v.size(); }
};

// Parameter layout, per block: conv1+bn1 (ReLU), conv2+bn2 (ReLU), dilated
// conv3+bn3, residual addition of the block input. Plus the 3->width 1x1
// lifting conv in front and the width->1 linear 1x1 projection at the end.
struct CanModel {
    CanConfig cfg;
    std::vector<Tensor> params;  // fixed order, see build()

    static CanModel build(const CanConfig& cfg) {
        cfg.validate();
        CanModel m;
        m.cfg = cfg;
        const int k = cfg.kernel, w = cfg.width;
        auto conv = [&m](const std::string& p, int out_c, int in_c, int k) {
            m.params.emplace_back(p + ".w", std::vector<int>{out_c, in_c, k, k});
            m.params.emplace_back(p + ".b", std::vector<int>{out_c});
        };
        auto bn = [&m, w](const std::string& p) {
            m.params.emplace_back(p + ".gamma", std::vector<int>{w});
            m.params.emplace_back(p + ".beta", std::vector<int>{w});
            m.params.emplace_back(p + ".running_mean", std::vector<int>{w});
            m.params.emplace_back(p + ".running_var", std::vector<int>{w});
        };
        conv("lift", w, 3, 1);  // 1x1 channel lift
        for (int b = 0; b < cfg.blocks; ++b) {
            const std::string pre = "block" + std::to_string(b);
            conv(pre + ".conv1", w, w, k);
            bn(pre + ".bn1");
            conv(pre + ".conv2", w, w, k);
            bn(pre + ".bn2");
            conv(pre + ".conv3", w, w, k);
            bn(pre + ".bn3");
        }
        conv("out", 1, w, 1);

        // BN defaults: identity affine, unit running variance
        for (Tensor& t : m.params) {
            if (t.name.ends_with(".gamma") || t.name.ends_with(".running_var"))
                std::fill(t.v.begin(), t.v.end(), 1.0);
        }
        return m;
    }

    Tensor& at(const std::string& name) {
        for (Tensor& t : params)
            if (t.name == name) return t;
        throw std::invalid_argument("CanModel: no parameter named " + name);
    }
    const Tensor& at(const std::string& name) const {
        return const_cast<CanModel*>(this)->at(name);
    }

    // Zero-mean normal init for conv weights, zero biases; BN left at identity.
    void init_random(std::uint64_t seed, double init_std) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, init_std);
        for (Tensor& t : params) {
            if (t.name.ends_with(".w"))
                for (double& x : t.v) x = dist(rng);
        }
    }

    bool is_trainable(std::size_t i) const {
        const std::string& n = params[i].name;
        return !(n.ends_with(".running_mean") || n.ends_with(".running_var"));
    }
};

namespace nn {

constexpr double kBnEps = 1e-5;

// Channel-major feature map: v[(c*h + y)*w + x].
struct Feature {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;
    Feature() = default;
    Feature(int c_, int h_, int w_) : c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
};

inline void conv2d(const Feature& in, const Tensor& wgt, const Tensor& bias, int dilation,
                   Feature& out) {
    const int k = wgt.dims[2], r = k / 2, out_c = wgt.dims[0], in_c = wgt.dims[1];
    out = Feature(out_c, in.h, in.w);
    for (int o = 0; o < out_c; ++o) {
        double* op = &out.v[static_cast<std::size_t>(o) * out.plane()];
        for (std::size_t i = 0; i < out.plane(); ++i) op[i] = bias.v[o];
        for (int ic = 0; ic < in_c; ++ic) {
            const double* ip = &in.v[static_cast<std::size_t>(ic) * in.plane()];
            const double* wp = &wgt.v[(static_cast<std::size_t>(o) * in_c + ic) * k * k];
            for (int ky = 0; ky < k; ++ky) {
                const int oy = (ky - r) * dilation;
                for (int kx = 0; kx < k; ++kx) {
                    const int ox = (kx - r) * dilation;
                    const double wv = wp[ky * k + kx];
                    if (wv == 0.0) continue;
                    const int y0 = std::max(0, -oy), y1 = std::min(in.h, in.h - oy);
                    const int x0 = std::max(0, -ox), x1 = std::min(in.w, in.w - ox);
                    for (int y = y0; y < y1; ++y)
                        for (int x = x0; x < x1; ++x)
                            op[static_cast<std::size_t>(y) * in.w + x] +=
                                wv * ip[static_cast<std::size_t>(y + oy) * in.w + x + ox];
                }
            }
        }
    }
}

inline void conv2d_backward(const Feature& in, const Tensor& wgt, int dilation,
                            const Feature& d_out, Feature& d_in, Tensor& d_wgt, Tensor& d_bias) {
    const int k = wgt.dims[2], r = k / 2, out_c = wgt.dims[0], in_c = wgt.dims[1];
    d_in = Feature(in_c, in.h, in.w);
    for (int o = 0; o < out_c; ++o) {
        const double* dop = &d_out.v[static_cast<std::size_t>(o) * d_out.plane()];
        for (std::size_t i = 0; i < d_out.plane(); ++i) d_bias.v[o] += dop[i];
        for (int ic = 0; ic < in_c; ++ic) {
            const double* ip = &in.v[static_cast<std::size_t>(ic) * in.plane()];
            double* dip = &d_in.v[static_cast<std::size_t>(ic) * in.plane()];
            const double* wp = &wgt.v[(static_cast<std::size_t>(o) * in_c + ic) * k * k];
            double* dwp = &d_wgt.v[(static_cast<std::size_t>(o) * in_c + ic) * k * k];
            for (int ky = 0; ky < k; ++ky) {
                const int oy = (ky - r) * dilation;
                for (int kx = 0; kx < k; ++kx) {
                    const int ox = (kx - r) * dilation;
                    const double wv = wp[ky * k + kx];
                    double dw = 0.0;
                    const int y0 = std::max(0, -oy), y1 = std::min(in.h, in.h - oy);
                    const int x0 = std::max(0, -ox), x1 = std::min(in.w, in.w - ox);
                    for (int y = y0; y < y1; ++y)
                        for (int x = x0; x < x1; ++x) {
                            const std::size_t oi = static_cast<std::size_t>(y) * in.w + x;
                            const std::size_t ii = static_cast<std::size_t>(y + oy) * in.w + x + ox;
                            dw += dop[oi] * ip[ii];
                            dip[ii] += wv * dop[oi];
                        }
                    dwp[ky * k + kx] += dw;
                }
            }
        }
    }
}

struct BnCache {
    std::vector<double> mean, inv_std;  // per channel (batch statistics)
    Feature x_hat;
};

inline void batch_norm_train(const Feature& in, Tensor& gamma, Tensor& beta,
                             Tensor& running_mean, Tensor& running_var, double momentum,
                             Feature& out, BnCache& cache) {
    const std::size_t plane = in.plane();
    out = Feature(in.c, in.h, in.w);
    cache.x_hat = Feature(in.c, in.h, in.w);
    cache.mean.assign(in.c, 0.0);
    cache.inv_std.assign(in.c, 0.0);
    for (int c = 0; c < in.c; ++c) {
        const double* ip = &in.v[c * plane];
        double m = 0.0;
        for (std::size_t i = 0; i < plane; ++i) m += ip[i];
        m /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) var += (ip[i] - m) * (ip[i] - m);
        var /= static_cast<double>(plane);

        cache.mean[c] = m;
        cache.inv_std[c] = 1.0 / std::sqrt(var + kBnEps);
        running_mean.v[c] = momentum * running_mean.v[c] + (1.0 - momentum) * m;
        running_var.v[c] = momentum * running_var.v[c] + (1.0 - momentum) * var;

        double* xh = &cache.x_hat.v[c * plane];
        double* op = &out.v[c * plane];
        for (std::size_t i = 0; i < plane; ++i) {
            xh[i] = (ip[i] - m) * cache.inv_std[c];
            op[i] = gamma.v[c] * xh[i] + beta.v[c];
        }
    }
}

inline void batch_norm_infer(const Feature& in, const Tensor& gamma, const Tensor& beta,
                             const Tensor& running_mean, const Tensor& running_var, Feature& out) {
    const std::size_t plane = in.plane();
    out = Feature(in.c, in.h, in.w);
    for (int c = 0; c < in.c; ++c) {
        const double scale = gamma.v[c] / std::sqrt(running_var.v[c] + kBnEps);
        const double shift = beta.v[c] - scale * running_mean.v[c];
        const double* ip = &in.v[c * plane];
        double* op = &out.v[c * plane];
        for (std::size_t i = 0; i < plane; ++i) op[i] = scale * ip[i] + shift;
    }
}

inline void batch_norm_backward(const BnCache& cache, const Tensor& gamma, const Feature& d_out,
                                Feature& d_in, Tensor& d_gamma, Tensor& d_beta) {
    const std::size_t plane = cache.x_hat.plane();
    d_in = Feature(cache.x_hat.c, cache.x_hat.h, cache.x_hat.w);
    for (int c = 0; c < cache.x_hat.c; ++c) {
        const double* dop = &d_out.v[c * plane];
        const double* xh = &cache.x_hat.v[c * plane];
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            sum_d += dop[i];
            sum_dx += dop[i] * xh[i];
        }
        d_gamma.v[c] += sum_dx;
        d_beta.v[c] += sum_d;
        const double inv_n = 1.0 / static_cast<double>(plane);
        const double scale = gamma.v[c] * cache.inv_std[c];
        double* dip = &d_in.v[c * plane];
        for (std::size_t i = 0; i < plane; ++i)
            dip[i] = scale * (dop[i] - inv_n * sum_d - xh[i] * inv_n * sum_dx);
    }
}

inline void relu(Feature& f) {
    for (double& x : f.v) x = std::max(x, 0.0);
}

inline void relu_backward(const Feature& pre_act, Feature& d) {
    for (std::size_t i = 0; i < d.v.size(); ++i)
        if (pre_act.v[i] <= 0.0) d.v[i] = 0.0;
}

}  // namespace nn

enum class CanMode { train, inference };

// Cached activations from a train-mode forward pass, consumed by backward().
struct ForwardCache {
    nn::Feature input;                     // 3 x H x W
    nn::Feature lifted;                    // output of lift conv (= block 0 input)
    struct BlockCache {
        nn::Feature in;                    // block input
        nn::Feature conv_in[3];            // inputs to the three convs
        nn::Feature conv_out[3];           // conv pre-BN outputs
        nn::BnCache bn[3];
        nn::Feature bn_out[3];             // BN outputs (pre-ReLU for 1,2)
    };
    std::vector<BlockCache> blocks;
    nn::Feature final_in;                  // input of the 1x1 projection
    bool valid = false;
};

namespace detail_can {

inline nn::Feature to_feature(const RgbImage& img) {
    nn::Feature f(3, img.height(), img.width());
    for (int c = 0; c < 3; ++c)
        for (std::size_t n = 0; n < img.pixels(); ++n)
            f.v[c * f.plane() + n] = img(n, c);
    return f;
}

}  // namespace detail_can

// Resolution-preserving forward pass. Train mode uses mini-batch (here:
// per-image spatial) BN statistics and fills the cache; inference mode uses
// the running statistics and is a deterministic affine map per channel.
inline ScalarMap can_forward(CanModel& model, const RgbImage& img, CanMode mode,
                             ForwardCache* cache = nullptr, double bn_momentum = 0.99) {
    using nn::Feature;
    const CanConfig& cfg = model.cfg;
    cfg.validate();

    Feature x = detail_can::to_feature(img);
    if (cache) {
        cache->input = x;
        cache->blocks.assign(cfg.blocks, {});
    }

    Feature lifted;
    nn::conv2d(x, model.at("lift.w"), model.at("lift.b"), 1, lifted);
    if (cache) cache->lifted = lifted;

    Feature cur = std::move(lifted);
    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string pre = "block" + std::to_string(b);
        ForwardCache::BlockCache* bc = cache ? &cache->blocks[b] : nullptr;
        if (bc) bc->in = cur;

        Feature h = cur;
        for (int layer = 0; layer < 3; ++layer) {
            const std::string conv = pre + ".conv" + std::to_string(layer + 1);
            const std::string bn = pre + ".bn" + std::to_string(layer + 1);
            const int dil = layer == 2 ? cfg.dilations[b] : 1;

            if (bc) bc->conv_in[layer] = h;
            Feature conv_out;
            nn::conv2d(h, model.at(conv + ".w"), model.at(conv + ".b"), dil, conv_out);
            if (bc) bc->conv_out[layer] = conv_out;

            Feature bn_out;
            if (mode == CanMode::train) {
                nn::BnCache bn_cache;
                nn::batch_norm_train(conv_out, model.at(bn + ".gamma"), model.at(bn + ".beta"),
                                     model.at(bn + ".running_mean"), model.at(bn + ".running_var"),
                                     bn_momentum, bn_out, bn_cache);
                if (bc) bc->bn[layer] = std::move(bn_cache);
            } else {
                nn::batch_norm_infer(conv_out, model.at(bn + ".gamma"), model.at(bn + ".beta"),
                                     model.at(bn + ".running_mean"), model.at(bn + ".running_var"),
                                     bn_out);
            }
            if (bc) bc->bn_out[layer] = bn_out;
            if (layer < 2) nn::relu(bn_out);
            h = std::move(bn_out);
        }
        // residual skip
        for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += cur.v[i];
        cur = std::move(h);
    }

    if (cache) {
        cache->final_in = cur;
        cache->valid = true;
    }
    Feature out;
    nn::conv2d(cur, model.at("out.w"), model.at("out.b"), 1, out);

    ScalarMap t(img.height(), img.width());
    std::copy(out.v.begin(), out.v.end(), t.data().begin());
    return t;
}

// Exact parameter gradients given d(loss)/d(output); requires the cache from
// a train-mode forward on the same input.
inline std::vector<Tensor> can_backward(const CanModel& model, const ForwardCache& cache,
                                        const ScalarMap& upstream) {
    using nn::Feature;
    if (!cache.valid) throw std::invalid_argument("can_backward: missing forward cache");
    const CanConfig& cfg = model.cfg;

    std::vector<Tensor> grads;
    grads.reserve(model.params.size());
    for (const Tensor& t : model.params) grads.emplace_back(t.name, t.dims);
    auto grad_of = [&grads](const std::string& name) -> Tensor& {
        for (Tensor& t : grads)
            if (t.name == name) return t;
        throw std::invalid_argument("can_backward: no gradient slot " + name);
    };

    Feature d_out(1, upstream.height(), upstream.width());
    std::copy(upstream.data().begin(), upstream.data().end(), d_out.v.begin());

    Feature d_cur;
    nn::conv2d_backward(cache.final_in, model.at("out.w"), 1, d_out, d_cur,
                        grad_of("out.w"), grad_of("out.b"));

    for (int b = cfg.blocks - 1; b >= 0; --b) {
        const std::string pre = "block" + std::to_string(b);
        const ForwardCache::BlockCache& bc = cache.blocks[b];
        Feature d_skip = d_cur;  // the residual addition feeds the block input directly

        Feature d = std::move(d_cur);
        for (int layer = 2; layer >= 0; --layer) {
            const std::string conv = pre + ".conv" + std::to_string(layer + 1);
            const std::string bn = pre + ".bn" + std::to_string(layer + 1);
            const int dil = layer == 2 ? cfg.dilations[b] : 1;

            if (layer < 2) nn::relu_backward(bc.bn_out[layer], d);
            Feature d_bn;
            nn::batch_norm_backward(bc.bn[layer], model.at(bn + ".gamma"), d, d_bn,
                                    grad_of(bn + ".gamma"), grad_of(bn + ".beta"));
            Feature d_in;
            nn::conv2d_backward(bc.conv_in[layer], model.at(conv + ".w"), dil, d_bn, d_in,
                                grad_of(conv + ".w"), grad_of(conv + ".b"));
            d = std::move(d_in);
        }
        for (std::size_t i = 0; i < d.v.size(); ++i) d.v[i] += d_skip.v[i];
        d_cur = std::move(d);
    }

    Feature d_input;
    nn::conv2d_backward(cache.input, model.at("lift.w"), 1, d_cur, d_input,
                        grad_of("lift.w"), grad_of("lift.b"));
    return grads;
}

// Inference pipeline: predicted transmission -> airlight -> radiance. Values
// are left unclamped; saving quantizes to [0,1].
inline RgbImage predict_and_dehaze(CanModel& model, const RgbImage& img, const DcpParams& dcp) {
    const ScalarMap t = can_forward(model, img, CanMode::inference);
    const Airlight a = estimate_airlight(img, dcp.patch);
    return recover_radiance(img, t, a, dcp.t0);
}

// --- model file format ------------------------------------------------------
// magic "DDCP" | u16 version | u32 blocks,width,kernel | u32 ndil | u32 dil[]
// | u32 tensor count | per tensor: u32 name_len, name bytes, u32 rank,
// u32 dims[], f32 little-endian data.

namespace detail_can {

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("model file truncated");
    return v;
}

}  // namespace detail_can

inline void save_model(const CanModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open model file for writing: " + path);
    os.write("DDCP", 4);
    detail_can::put<std::uint16_t>(os, 1);
    detail_can::put<std::uint32_t>(os, model.cfg.blocks);
    detail_can::put<std::uint32_t>(os, model.cfg.width);
    detail_can::put<std::uint32_t>(os, model.cfg.kernel);
    detail_can::put<std::uint32_t>(os, static_cast<std::uint32_t>(model.cfg.dilations.size()));
    for (int d : model.cfg.dilations) detail_can::put<std::uint32_t>(os, d);
    detail_can::put<std::uint32_t>(os, static_cast<std::uint32_t>(model.params.size()));
    for (const Tensor& t : model.params) {
        detail_can::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail_can::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dims.size()));
        for (int d : t.dims) detail_can::put<std::uint32_t>(os, d);
        for (double x : t.v) detail_can::put<float>(os, static_cast<float>(x));
    }
    if (!os) throw std::runtime_error("write failure: " + path);
}

inline CanModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open model file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DDCP", 4) != 0)
        throw std::runtime_error("not a DDCP model file: " + path);
    const auto version = detail_can::get<std::uint16_t>(is);
    if (version != 1) throw std::runtime_error("unsupported model format version");

    CanConfig cfg;
    cfg.blocks = static_cast<int>(detail_can::get<std::uint32_t>(is));
    cfg.width = static_cast<int>(detail_can::get<std::uint32_t>(is));
    cfg.kernel = static_cast<int>(detail_can::get<std::uint32_t>(is));
    const auto ndil = detail_can::get<std::uint32_t>(is);
    cfg.dilations.resize(ndil);
    for (auto& d : cfg.dilations) d = static_cast<int>(detail_can::get<std::uint32_t>(is));

    CanModel m = CanModel::build(cfg);
    const auto count = detail_can::get<std::uint32_t>(is);
    if (count != m.params.size()) throw std::runtime_error("model tensor count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail_can::get<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rank = detail_can::get<std::uint32_t>(is);
        std::vector<int> dims(rank);
        for (auto& d : dims) d = static_cast<int>(detail_can::get<std::uint32_t>(is));
        Tensor& t = m.at(name);
        if (t.dims != dims) throw std::runtime_error("model tensor shape mismatch: " + name);
        for (double& x : t.v) x = static_cast<double>(detail_can::get<float>(is));
    }
    return m;
}

}  // namespace hazelab
