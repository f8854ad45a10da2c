#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hazelab/can.hpp"
#include "hazelab/image.hpp"

namespace hazelab {

constexpr double kPsnrCap = 100.0;  // reported for zero MSE

// 10*log10(1/MSE) over all pixels and channels, inputs clamped to [0,1].
inline double psnr(const RgbImage& a, const RgbImage& b) {
    if (!a.same_size(b)) throw std::invalid_argument("psnr: image dimensions differ");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = std::clamp(a.data()[i], 0.0, 1.0) - std::clamp(b.data()[i], 0.0, 1.0);
        mse += d * d;
    }
    mse /= static_cast<double>(a.data().size());
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace detail_ssim {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size) * size);
    const int r = size / 2;
    double sum = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double d2 = (y - r) * (y - r) + (x - r) * (x - r);
            w[static_cast<std::size_t>(y) * size + x] = std::exp(-d2 / (2.0 * sigma * sigma));
            sum += w[static_cast<std::size_t>(y) * size + x];
        }
    for (double& v : w) v /= sum;
    return w;
}

inline std::vector<double> to_gray(const RgbImage& img) {
    std::vector<double> g(img.pixels());
    for (std::size_t n = 0; n < img.pixels(); ++n)
        g[n] = (img(n, 0) + img(n, 1) + img(n, 2)) / 3.0;
    return g;
}

}  // namespace detail_ssim

// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5), on the
// channel-mean grayscale, dynamic range 1, K1 = 0.01, K2 = 0.03.
inline double ssim(const RgbImage& a, const RgbImage& b) {
    if (!a.same_size(b)) throw std::invalid_argument("ssim: image dimensions differ");
    constexpr int kWin = 11;
    constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
    if (a.height() < kWin || a.width() < kWin)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    static const std::vector<double> win = detail_ssim::gaussian_window(kWin, 1.5);
    const std::vector<double> ga = detail_ssim::to_gray(a);
    const std::vector<double> gb = detail_ssim::to_gray(b);
    const int h = a.height(), w = a.width();

    double total = 0.0;
    std::size_t count = 0;
    for (int y = 0; y + kWin <= h; ++y)
        for (int x = 0; x + kWin <= w; ++x) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (int wy = 0; wy < kWin; ++wy)
                for (int wx = 0; wx < kWin; ++wx) {
                    const double k = win[static_cast<std::size_t>(wy) * kWin + wx];
                    const double va = ga[static_cast<std::size_t>(y + wy) * w + x + wx];
                    const double vb = gb[static_cast<std::size_t>(y + wy) * w + x + wx];
                    mu_a += k * va;
                    mu_b += k * vb;
                    aa += k * va * va;
                    bb += k * vb * vb;
                    ab += k * va * vb;
                }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            total += ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
                     ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
            ++count;
        }
    return total / static_cast<double>(count);
}

struct EvalEntry {
    std::string name;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double time_s = 0.0;
};

struct EvalReport {
    std::vector<EvalEntry> entries;
    std::vector<std::string> skipped;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double mean_time_s = 0.0;

    void finalize() {
        if (entries.empty()) return;
        mean_psnr = mean_ssim = mean_time_s = 0.0;
        for (const EvalEntry& e : entries) {
            mean_psnr += e.psnr_db;
            mean_ssim += e.ssim;
            mean_time_s += e.time_s;
        }
        mean_psnr /= entries.size();
        mean_ssim /= entries.size();
        mean_time_s /= entries.size();
    }

    std::string to_text() const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4);
        os << std::left << std::setw(32) << "filename" << std::right << std::setw(10) << "psnr_db"
           << std::setw(10) << "ssim" << std::setw(10) << "time_s" << "\n";
        for (const EvalEntry& e : entries)
            os << std::left << std::setw(32) << e.name << std::right << std::setw(10) << e.psnr_db
               << std::setw(10) << e.ssim << std::setw(10) << e.time_s << "\n";
        os << std::left << std::setw(32) << "mean" << std::right << std::setw(10) << mean_psnr
           << std::setw(10) << mean_ssim << std::setw(10) << mean_time_s << "\n";
        for (const std::string& s : skipped) os << "skipped " << s << "\n";
        return os.str();
    }

    // Line-oriented key-value document, one record per line.
    std::string to_kv() const {
        std::ostringstream os;
        os << std::setprecision(12);
        for (const EvalEntry& e : entries)
            os << "image filename=" << e.name << " psnr_db=" << e.psnr_db << " ssim=" << e.ssim
               << " time_s=" << e.time_s << "\n";
        for (const std::string& s : skipped) os << "skipped filename=" << s << "\n";
        os << "means psnr_db=" << mean_psnr << " ssim=" << mean_ssim << " time_s=" << mean_time_s
           << "\n";
        return os.str();
    }
};

namespace detail_eval {

inline RgbImage clamp01(const RgbImage& img) {
    RgbImage out = img;
    for (double& x : out.data()) x = std::clamp(x, 0.0, 1.0);
    return out;
}

// Min-max normalization to [0,1]; identity when the image is constant.
inline RgbImage normalize01(const RgbImage& img) {
    const auto [lo_it, hi_it] = std::minmax_element(img.data().begin(), img.data().end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi - lo <= 0.0) return clamp01(img);
    RgbImage out = img;
    for (double& x : out.data()) x = (x - lo) / (hi - lo);
    return out;
}

// Clamp by default; switch to min-max normalization only when it improves
// both PSNR and SSIM against the reference.
inline std::pair<double, double> best_metrics(const RgbImage& raw, const RgbImage& ref) {
    const RgbImage clamped = clamp01(raw);
    const double p0 = psnr(clamped, ref), s0 = ssim(clamped, ref);
    const RgbImage normalized = normalize01(raw);
    const double p1 = psnr(normalized, ref), s1 = ssim(normalized, ref);
    if (p1 > p0 && s1 > s0) return {p1, s1};
    return {p0, s0};
}

}  // namespace detail_eval

// Dehazes each hazy image with the model and scores it against its clear pair.
inline EvalReport validate(CanModel& model, const std::vector<std::pair<RgbImage, RgbImage>>& pairs,
                           const DcpParams& dcp) {
    if (pairs.empty()) throw std::invalid_argument("validate: empty pair list");
    EvalReport report;
    int i = 0;
    for (const auto& [hazy, clear] : pairs) {
        const std::string name = "pair" + std::to_string(i++);
        if (!hazy.same_size(clear)) {
            report.skipped.push_back(name);
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        const RgbImage dehazed = predict_and_dehaze(model, hazy, dcp);
        const auto t1 = std::chrono::steady_clock::now();
        const auto [p, s] = detail_eval::best_metrics(dehazed, clear);
        EvalEntry e;
        e.name = name;
        e.psnr_db = p;
        e.ssim = s;
        e.time_s = std::chrono::duration<double>(t1 - t0).count();
        report.entries.push_back(e);
    }
    report.finalize();
    return report;
}

// Best epoch by mean PSNR; ties go to higher SSIM, then to the earlier epoch.
inline std::size_t select_best_epoch(const std::vector<EvalReport>& history) {
    if (history.empty()) throw std::invalid_argument("select_best_epoch: empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i].mean_psnr > history[best].mean_psnr ||
            (history[i].mean_psnr == history[best].mean_psnr &&
             history[i].mean_ssim > history[best].mean_ssim))
            best = i;
    }
    return best;
}

}  // namespace hazelab
