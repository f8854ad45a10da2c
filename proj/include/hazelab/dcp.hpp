#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "hazelab/image.hpp"

namespace hazelab {

struct DcpParams {
    int patch = 15;       // dark-channel window side, odd
    double omega = 0.95;  // haze retention factor, (0,1]
    double t0 = 0.1;      // lower transmission clamp for reconstruction

    void validate() const {
        if (patch < 1 || patch % 2 == 0)
            throw std::invalid_argument("DcpParams: patch must be odd and >= 1");
        if (!(omega > 0.0) || omega > 1.0)
            throw std::invalid_argument("DcpParams: omega must be in (0,1]");
        if (!(t0 > 0.0) || !(t0 < 1.0))
            throw std::invalid_argument("DcpParams: t0 must be in (0,1)");
    }
};

// min over channels and over the patch window centered at each pixel.
// Windows are clipped at image borders.
inline ScalarMap dark_channel(const RgbImage& img, int patch) {
    if (patch < 1 || patch % 2 == 0)
        throw std::invalid_argument("dark_channel: patch must be odd and >= 1");
    const int h = img.height(), w = img.width();
    const int r = patch / 2;

    // separable: channel-min, then row min, then column min
    ScalarMap chan_min(h, w);
    for (std::size_t n = 0; n < img.pixels(); ++n)
        chan_min[n] = std::min({img(n, 0), img(n, 1), img(n, 2)});

    ScalarMap row_min(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double m = chan_min.at(y, x);
            for (int dx = -r; dx <= r; ++dx) {
                const int xx = x + dx;
                if (xx >= 0 && xx < w) m = std::min(m, chan_min.at(y, xx));
            }
            row_min.at(y, x) = m;
        }

    ScalarMap out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double m = row_min.at(y, x);
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = y + dy;
                if (yy >= 0 && yy < h) m = std::min(m, row_min.at(yy, x));
            }
            out.at(y, x) = m;
        }
    return out;
}

// Picks the top 0.1% brightest dark-channel locations (at least one), then the
// one with maximal channel sum in the hazy image. Ties go to the lowest linear
// index. Channels are floored at 1e-6 so Eq.-style divisions stay defined.
inline Airlight estimate_airlight(const RgbImage& img, int patch) {
    const ScalarMap dc = dark_channel(img, patch);
    const std::size_t n_pix = img.pixels();
    const std::size_t n_top =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(n_pix * 0.001)));

    std::vector<std::size_t> idx(n_pix);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&dc](std::size_t a, std::size_t b) { return dc[a] > dc[b]; });

    std::size_t best = idx[0];
    double best_sum = -1.0;
    for (std::size_t k = 0; k < n_top; ++k) {
        const std::size_t n = idx[k];
        const double s = img(n, 0) + img(n, 1) + img(n, 2);
        if (s > best_sum || (s == best_sum && n < best)) {
            best_sum = s;
            best = n;
        }
    }

    Airlight a{};
    for (int c = 0; c < 3; ++c)
        a.rgb[c] = std::max(img(best, c), 1e-6);
    return a;
}

// t~(x) = 1 - omega * min_c min_{y in patch}( I^c(y) / A^c )
inline ScalarMap coarse_transmission(const RgbImage& img, const Airlight& a, const DcpParams& params) {
    params.validate();
    for (double c : a.rgb)
        if (!(c > 0.0)) throw std::invalid_argument("coarse_transmission: airlight channel must be > 0");

    RgbImage normalized(img.height(), img.width());
    for (std::size_t n = 0; n < img.pixels(); ++n)
        for (int c = 0; c < 3; ++c)
            normalized(n, c) = img(n, c) / a.rgb[c];

    ScalarMap dc = dark_channel(normalized, params.patch);
    ScalarMap t(img.height(), img.width());
    for (std::size_t n = 0; n < t.size(); ++n)
        t[n] = 1.0 - params.omega * dc[n];
    return t;
}

// J(x) = (I(x) - A) / max(t(x), t0) + A. Output is not clamped to [0,1].
inline RgbImage recover_radiance(const RgbImage& img, const ScalarMap& t, const Airlight& a, double t0) {
    if (img.height() != t.height() || img.width() != t.width())
        throw std::invalid_argument("recover_radiance: image and transmission dimensions differ");
    if (!(t0 > 0.0) || !(t0 < 1.0))
        throw std::invalid_argument("recover_radiance: t0 must be in (0,1)");

    RgbImage out(img.height(), img.width());
    for (std::size_t n = 0; n < img.pixels(); ++n) {
        const double tn = std::max(t[n], t0);
        for (int c = 0; c < 3; ++c)
            out(n, c) = (img(n, c) - a.rgb[c]) / tn + a.rgb[c];
    }
    return out;
}

}  // namespace hazelab
