#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "hazelab/image.hpp"

namespace hazelab {

// Vectorized matting weights: one 9x9 block (81 pair slots) per fully-interior
// 3x3 window. Pair slot k maps to (i, j) = (k / 9, k % 9), i.e. the
// T_I = (1,...,1,2,...,2,...) / T_J = (1,2,...,9,1,2,...,9,...) layouts.
struct MattingWeights {
    static constexpr int kPairs = 81;

    int height = 0;
    int width = 0;
    int win_rows = 0;  // height - 2
    int win_cols = 0;  // width - 2
    std::vector<double> w;  // win_rows * win_cols * 81, window-major

    std::size_t windows() const { return static_cast<std::size_t>(win_rows) * win_cols; }

    // Linear pixel index of window member i (row-major within the 3x3 window).
    std::size_t member(std::size_t win, int i) const {
        const int cy = static_cast<int>(win) / win_cols + 1;
        const int cx = static_cast<int>(win) % win_cols + 1;
        return static_cast<std::size_t>(cy + i / 3 - 1) * width + (cx + i % 3 - 1);
    }

    const double* block(std::size_t win) const { return &w[win * kPairs]; }
};

// w_ij = (1/9) * (1 + (I_i - mu)^T (Sigma + eps/9 * U3)^{-1} (I_j - mu))
// over every 3x3 window fully inside the image. The 3x3 inverse is formed by
// the adjugate of the regularized covariance.
inline MattingWeights matting_weights(const RgbImage& img, double eps = 1e-6) {
    if (img.height() < 3 || img.width() < 3)
        throw std::invalid_argument("matting_weights: image must be at least 3x3");
    if (!(eps > 0.0)) throw std::invalid_argument("matting_weights: eps must be > 0");

    MattingWeights mw;
    mw.height = img.height();
    mw.width = img.width();
    mw.win_rows = img.height() - 2;
    mw.win_cols = img.width() - 2;
    mw.w.resize(mw.windows() * MattingWeights::kPairs);

    const double reg = eps / 9.0;
    for (int cy = 1; cy < img.height() - 1; ++cy) {
        for (int cx = 1; cx < img.width() - 1; ++cx) {
            double px[9][3];
            double mu[3] = {0, 0, 0};
            for (int i = 0; i < 9; ++i) {
                const int y = cy + i / 3 - 1, x = cx + i % 3 - 1;
                for (int c = 0; c < 3; ++c) {
                    px[i][c] = img.at(y, x, c);
                    mu[c] += px[i][c];
                }
            }
            for (double& m : mu) m /= 9.0;
            for (int i = 0; i < 9; ++i)
                for (int c = 0; c < 3; ++c) px[i][c] -= mu[c];

            // biased covariance + regularization
            double s[3][3] = {};
            for (int i = 0; i < 9; ++i)
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b) s[a][b] += px[i][a] * px[i][b];
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) s[a][b] /= 9.0;
            for (int a = 0; a < 3; ++a) s[a][a] += reg;

            // inverse by adjugate / determinant
            double inv[3][3];
            inv[0][0] = s[1][1] * s[2][2] - s[1][2] * s[2][1];
            inv[0][1] = s[0][2] * s[2][1] - s[0][1] * s[2][2];
            inv[0][2] = s[0][1] * s[1][2] - s[0][2] * s[1][1];
            inv[1][0] = s[1][2] * s[2][0] - s[1][0] * s[2][2];
            inv[1][1] = s[0][0] * s[2][2] - s[0][2] * s[2][0];
            inv[1][2] = s[0][2] * s[1][0] - s[0][0] * s[1][2];
            inv[2][0] = s[1][0] * s[2][1] - s[1][1] * s[2][0];
            inv[2][1] = s[0][1] * s[2][0] - s[0][0] * s[2][1];
            inv[2][2] = s[0][0] * s[1][1] - s[0][1] * s[1][0];
            const double det = s[0][0] * inv[0][0] + s[0][1] * inv[1][0] + s[0][2] * inv[2][0];
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) inv[a][b] /= det;

            // M^{-1} (I_j - mu) for all j, then the 81 pair weights
            double minv_px[9][3];
            for (int j = 0; j < 9; ++j)
                for (int a = 0; a < 3; ++a)
                    minv_px[j][a] = inv[a][0] * px[j][0] + inv[a][1] * px[j][1] + inv[a][2] * px[j][2];

            double* blk = &mw.w[(static_cast<std::size_t>(cy - 1) * mw.win_cols + (cx - 1)) *
                                MattingWeights::kPairs];
            // fill i <= j and mirror so the blocks are bitwise symmetric
            for (int i = 0; i < 9; ++i)
                for (int j = i; j < 9; ++j) {
                    const double dot =
                        px[i][0] * minv_px[j][0] + px[i][1] * minv_px[j][1] + px[i][2] * minv_px[j][2];
                    blk[i * 9 + j] = (1.0 + dot) / 9.0;
                    blk[j * 9 + i] = blk[i * 9 + j];
                }
        }
    }
    return mw;
}

// Symmetric sparse matrix in CSR; the matting Laplacian has a 5x5 stencil.
struct SparseLaplacian {
    int height = 0;
    int width = 0;
    std::size_t n = 0;
    std::vector<std::size_t> row_ptr;
    std::vector<std::size_t> col_idx;
    std::vector<double> vals;

    void matvec(const std::vector<double>& x, std::vector<double>& y) const {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
                acc += vals[k] * x[col_idx[k]];
            y[i] = acc;
        }
    }

    double quadratic_form(const std::vector<double>& x) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
                acc += x[i] * vals[k] * x[col_idx[k]];
        return acc;
    }

    std::vector<double> diagonal() const {
        std::vector<double> d(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k)
                if (col_idx[k] == i) d[i] = vals[k];
        return d;
    }

    double max_diagonal() const {
        double m = 0.0;
        for (double d : diagonal()) m = std::max(m, d);
        return m;
    }

    // Gershgorin upper bound on the largest eigenvalue.
    double gershgorin_bound() const {
        double bound = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double diag = 0.0, off = 0.0;
            for (std::size_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) {
                if (col_idx[k] == i) diag = vals[k];
                else off += std::abs(vals[k]);
            }
            bound = std::max(bound, diag + off);
        }
        return bound;
    }
};

// L_ij = sum over windows containing both i and j of (delta_ij - w_ij).
inline SparseLaplacian assemble_laplacian(const MattingWeights& mw) {
    SparseLaplacian lap;
    lap.height = mw.height;
    lap.width = mw.width;
    lap.n = static_cast<std::size_t>(mw.height) * mw.width;

    // dense 5x5 stencil accumulation per row, then CSR compression
    const int h = mw.height, w = mw.width;
    std::vector<double> acc(lap.n * 25, 0.0);
    auto slot = [w](std::size_t i, std::size_t j) {
        const int dy = static_cast<int>(j / w) - static_cast<int>(i / w);
        const int dx = static_cast<int>(j % w) - static_cast<int>(i % w);
        return i * 25 + (dy + 2) * 5 + (dx + 2);
    };

    for (std::size_t win = 0; win < mw.windows(); ++win) {
        const double* blk = mw.block(win);
        std::size_t members[9];
        for (int i = 0; i < 9; ++i) members[i] = mw.member(win, i);
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j) {
                const double v = (i == j ? 1.0 : 0.0) - blk[i * 9 + j];
                acc[slot(members[i], members[j])] += v;
            }
    }

    lap.row_ptr.assign(lap.n + 1, 0);
    for (std::size_t i = 0; i < lap.n; ++i) {
        const int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
        std::size_t count = 0;
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
                if (y + dy < 0 || y + dy >= h || x + dx < 0 || x + dx >= w) continue;
                if (acc[i * 25 + (dy + 2) * 5 + (dx + 2)] != 0.0 || (dy == 0 && dx == 0)) ++count;
            }
        lap.row_ptr[i + 1] = lap.row_ptr[i] + count;
    }
    lap.col_idx.resize(lap.row_ptr[lap.n]);
    lap.vals.resize(lap.row_ptr[lap.n]);
    for (std::size_t i = 0; i < lap.n; ++i) {
        const int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
        std::size_t k = lap.row_ptr[i];
        for (int dy = -2; dy <= 2; ++dy)
            for (int dx = -2; dx <= 2; ++dx) {
                if (y + dy < 0 || y + dy >= h || x + dx < 0 || x + dx >= w) continue;
                const double v = acc[i * 25 + (dy + 2) * 5 + (dx + 2)];
                if (v != 0.0 || (dy == 0 && dx == 0)) {
                    lap.col_idx[k] = i + static_cast<std::size_t>(dy) * w + dx;
                    lap.vals[k] = v;
                    ++k;
                }
            }
    }
    return lap;
}

struct SolveResult {
    ScalarMap t;
    int iterations = 0;
    double residual = 0.0;  // final relative residual
    bool converged = false;
};

// Solves (L + lambda I) t = lambda t~ by Jacobi-preconditioned CG.
// A non-converged solve returns the best iterate flagged, not an error.
inline SolveResult refine_soft_matting(const ScalarMap& coarse, const SparseLaplacian& lap,
                                       double lambda = 1e-4, double tol = 1e-6,
                                       int max_iter = 2000) {
    if (!(lambda > 0.0)) throw std::invalid_argument("refine_soft_matting: lambda must be > 0");
    if (coarse.size() != lap.n)
        throw std::invalid_argument("refine_soft_matting: coarse map and Laplacian dimensions differ");
    for (double v : coarse.data())
        if (!std::isfinite(v)) throw std::invalid_argument("refine_soft_matting: coarse map must be finite");

    const std::size_t n = lap.n;
    std::vector<double> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = lambda * coarse[i];

    std::vector<double> m_inv = lap.diagonal();
    for (double& d : m_inv) d = 1.0 / (d + lambda);

    std::vector<double> x(coarse.data());  // warm start at t~
    std::vector<double> r(n), z(n), p(n), ap(n);

    auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
        lap.matvec(v, out);
        for (std::size_t i = 0; i < n; ++i) out[i] += lambda * v[i];
    };

    apply(x, r);
    double b_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r[i] = b[i] - r[i];
        b_norm += b[i] * b[i];
    }
    b_norm = std::sqrt(std::max(b_norm, 1e-300));

    auto rel_residual = [&]() {
        double s = 0.0;
        for (double v : r) s += v * v;
        return std::sqrt(s) / b_norm;
    };

    SolveResult res;
    double rz = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = m_inv[i] * r[i];
        rz += r[i] * z[i];
    }
    p = z;

    int it = 0;
    double rel = rel_residual();
    while (rel > tol && it < max_iter) {
        apply(p, ap);
        double pap = 0.0;
        for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
        const double alpha = rz / pap;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        double rz_new = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            z[i] = m_inv[i] * r[i];
            rz_new += r[i] * z[i];
        }
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        ++it;
        rel = rel_residual();
    }

    res.t = ScalarMap(coarse.height(), coarse.width());
    std::copy(x.begin(), x.end(), res.t.data().begin());
    res.iterations = it;
    res.residual = rel;
    res.converged = rel <= tol;
    return res;
}

namespace detail {

// Normalized box mean with border-clipped windows, via summed-area table.
inline std::vector<double> box_mean(const std::vector<double>& src, int h, int w, int radius) {
    std::vector<double> sat(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            sat[(y + 1ull) * (w + 1) + x + 1] = src[static_cast<std::size_t>(y) * w + x] +
                                                sat[static_cast<std::size_t>(y) * (w + 1) + x + 1] +
                                                sat[(y + 1ull) * (w + 1) + x] -
                                                sat[static_cast<std::size_t>(y) * (w + 1) + x];
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int y0 = std::max(0, y - radius), y1 = std::min(h - 1, y + radius);
            const int x0 = std::max(0, x - radius), x1 = std::min(w - 1, x + radius);
            const double sum = sat[(y1 + 1ull) * (w + 1) + x1 + 1] -
                               sat[static_cast<std::size_t>(y0) * (w + 1) + x1 + 1] -
                               sat[(y1 + 1ull) * (w + 1) + x0] +
                               sat[static_cast<std::size_t>(y0) * (w + 1) + x0];
            out[static_cast<std::size_t>(y) * w + x] = sum / ((y1 - y0 + 1) * (x1 - x0 + 1));
        }
    return out;
}

}  // namespace detail

// Color guided filter: smooths the coarse map guided by the hazy image.
inline ScalarMap refine_guided_filter(const ScalarMap& coarse, const RgbImage& guide,
                                      int radius = 20, double eps_gf = 1e-3) {
    if (coarse.height() != guide.height() || coarse.width() != guide.width())
        throw std::invalid_argument("refine_guided_filter: map and guide dimensions differ");
    if (radius < 1) throw std::invalid_argument("refine_guided_filter: radius must be >= 1");
    if (!(eps_gf > 0.0)) throw std::invalid_argument("refine_guided_filter: eps must be > 0");

    const int h = coarse.height(), w = coarse.width();
    const std::size_t n = coarse.size();

    std::array<std::vector<double>, 3> chan;
    for (int c = 0; c < 3; ++c) {
        chan[c].resize(n);
        for (std::size_t i = 0; i < n; ++i) chan[c][i] = guide(i, c);
    }

    std::array<std::vector<double>, 3> mean_i;
    for (int c = 0; c < 3; ++c) mean_i[c] = detail::box_mean(chan[c], h, w, radius);
    std::vector<double> mean_p = detail::box_mean(coarse.data(), h, w, radius);

    // cross-correlations
    std::vector<double> tmp(n);
    std::array<std::vector<double>, 3> corr_ip;
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < n; ++i) tmp[i] = chan[c][i] * coarse[i];
        corr_ip[c] = detail::box_mean(tmp, h, w, radius);
    }
    std::array<std::array<std::vector<double>, 3>, 3> corr_ii;
    for (int a = 0; a < 3; ++a)
        for (int b = a; b < 3; ++b) {
            for (std::size_t i = 0; i < n; ++i) tmp[i] = chan[a][i] * chan[b][i];
            corr_ii[a][b] = detail::box_mean(tmp, h, w, radius);
        }

    std::array<std::vector<double>, 3> a_coef;
    for (auto& v : a_coef) v.resize(n);
    std::vector<double> b_coef(n);

    for (std::size_t i = 0; i < n; ++i) {
        double s[3][3];
        for (int a = 0; a < 3; ++a)
            for (int b = a; b < 3; ++b) {
                s[a][b] = corr_ii[a][b][i] - mean_i[a][i] * mean_i[b][i];
                s[b][a] = s[a][b];
            }
        for (int a = 0; a < 3; ++a) s[a][a] += eps_gf;

        double cov[3];
        for (int c = 0; c < 3; ++c) cov[c] = corr_ip[c][i] - mean_i[c][i] * mean_p[i];

        double inv[3][3];
        inv[0][0] = s[1][1] * s[2][2] - s[1][2] * s[2][1];
        inv[0][1] = s[0][2] * s[2][1] - s[0][1] * s[2][2];
        inv[0][2] = s[0][1] * s[1][2] - s[0][2] * s[1][1];
        inv[1][0] = inv[0][1];
        inv[1][1] = s[0][0] * s[2][2] - s[0][2] * s[2][0];
        inv[1][2] = s[0][2] * s[1][0] - s[0][0] * s[1][2];
        inv[2][0] = inv[0][2];
        inv[2][1] = inv[1][2];
        inv[2][2] = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        const double det = s[0][0] * inv[0][0] + s[0][1] * inv[1][0] + s[0][2] * inv[2][0];

        double dot = 0.0;
        for (int c = 0; c < 3; ++c) {
            a_coef[c][i] = (inv[c][0] * cov[0] + inv[c][1] * cov[1] + inv[c][2] * cov[2]) / det;
            dot += a_coef[c][i] * mean_i[c][i];
        }
        b_coef[i] = mean_p[i] - dot;
    }

    std::array<std::vector<double>, 3> mean_a;
    for (int c = 0; c < 3; ++c) mean_a[c] = detail::box_mean(a_coef[c], h, w, radius);
    std::vector<double> mean_b = detail::box_mean(b_coef, h, w, radius);

    ScalarMap out(h, w);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = mean_a[0][i] * chan[0][i] + mean_a[1][i] * chan[1][i] +
                 mean_a[2][i] * chan[2][i] + mean_b[i];
    return out;
}

}  // namespace hazelab
