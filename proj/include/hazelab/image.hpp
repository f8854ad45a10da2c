#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace hazelab {

// H x W x 3 image, intensities nominally in [0,1], row-major.
// The linear pixel index n = y * width + x fixes the ordering used by the
// sparse matting Laplacian.
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(int height, int width, double fill = 0.0)
        : h_(height), w_(width), data_(static_cast<std::size_t>(height) * width * 3, fill) {
        if (height < 1 || width < 1)
            throw std::invalid_argument("RgbImage: dimensions must be >= 1");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    std::size_t pixels() const { return static_cast<std::size_t>(h_) * w_; }

    double& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * w_ + x) * 3 + c]; }
    double at(int y, int x, int c) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * 3 + c]; }

    double& operator()(std::size_t n, int c) { return data_[n * 3 + c]; }
    double operator()(std::size_t n, int c) const { return data_[n * 3 + c]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_size(const RgbImage& o) const { return h_ == o.h_ && w_ == o.w_; }

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<double> data_;
};

// H x W scalar field: transmission maps, depth maps, dark channels.
class ScalarMap {
public:
    ScalarMap() = default;
    ScalarMap(int height, int width, double fill = 0.0)
        : h_(height), w_(width), data_(static_cast<std::size_t>(height) * width, fill) {
        if (height < 1 || width < 1)
            throw std::invalid_argument("ScalarMap: dimensions must be >= 1");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    std::size_t size() const { return data_.size(); }

    double& at(int y, int x) { return data_[static_cast<std::size_t>(y) * w_ + x]; }
    double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * w_ + x]; }

    double& operator[](std::size_t n) { return data_[n]; }
    double operator[](std::size_t n) const { return data_[n]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_size(const ScalarMap& o) const { return h_ == o.h_ && w_ == o.w_; }

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<double> data_;
};

struct Airlight {
    double rgb[3];
};

// Parameters for synthesizing haze from a clear image and a depth map.
struct SynthSpec {
    double beta = 1.0;           // scattering coefficient, >= 0
    Airlight airlight{{0.8, 0.8, 0.8}};  // channels in (0,1]
    ScalarMap depth;             // d(x) >= 0, same size as the clear image

    void validate() const {
        if (beta < 0.0) throw std::invalid_argument("SynthSpec: beta must be >= 0");
        for (double a : airlight.rgb)
            if (!(a > 0.0) || a > 1.0)
                throw std::invalid_argument("SynthSpec: airlight channels must be in (0,1]");
        for (double d : depth.data())
            if (!(d >= 0.0)) throw std::invalid_argument("SynthSpec: depth must be >= 0");
    }
};

// I(x) = t(x) J(x) + (1 - t(x)) A, with t(x) = exp(-beta * d(x)).
// Returns the hazy image together with the true transmission map.
inline std::pair<RgbImage, ScalarMap> compose_haze(const RgbImage& clear, const SynthSpec& spec) {
    spec.validate();
    if (clear.height() != spec.depth.height() || clear.width() != spec.depth.width())
        throw std::invalid_argument("compose_haze: clear image and depth map dimensions differ");

    RgbImage hazy(clear.height(), clear.width());
    ScalarMap t(clear.height(), clear.width());
    const std::size_t n_pix = clear.pixels();
    for (std::size_t n = 0; n < n_pix; ++n) {
        const double tn = std::exp(-spec.beta * spec.depth[n]);
        t[n] = tn;
        for (int c = 0; c < 3; ++c)
            hazy(n, c) = tn * clear(n, c) + (1.0 - tn) * spec.airlight.rgb[c];
    }
    return {std::move(hazy), std::move(t)};
}

}  // namespace hazelab
