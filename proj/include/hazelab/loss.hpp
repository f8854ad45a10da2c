#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "hazelab/dcp.hpp"
#include "hazelab/image.hpp"
#include "hazelab/matting.hpp"

namespace hazelab {

// Everything the unsupervised energy needs about one hazy image, computed once
// and then treated as a constant: the vectorized matting weights, the
// assembled Laplacian (same weight pass), the coarse transmission and the
// airlight. Gradients never flow into these.
struct LossContext {
    MattingWeights weights;
    SparseLaplacian laplacian;
    ScalarMap coarse;
    Airlight airlight;
    double lambda = 1e-4;
    bool per_pixel_normalized = false;  // off by default; divides by pixel count

    double scale() const {
        return per_pixel_normalized ? 1.0 / static_cast<double>(coarse.size()) : 1.0;
    }
};

inline LossContext build_loss_context(const RgbImage& img, const DcpParams& params = {},
                                      double eps = 1e-6, double lambda = 1e-4) {
    LossContext ctx;
    ctx.airlight = estimate_airlight(img, params.patch);
    ctx.coarse = coarse_transmission(img, ctx.airlight, params);
    ctx.weights = matting_weights(img, eps);
    ctx.laplacian = assemble_laplacian(ctx.weights);
    ctx.lambda = lambda;
    return ctx;
}

// Smoothness + fidelity energy in the vectorized pair form:
//   1/2 * sum_n sum_k W (t_TI - t_TJ)^2  +  lambda * sum (t - t~)^2.
// The 1/2 makes the pair form equal t^T L t exactly; the pair expansion double
// counts each (i,j)/(j,i) edge relative to the Laplacian quadratic form.
inline double energy(const LossContext& ctx, const ScalarMap& t) {
    if (!t.same_size(ctx.coarse))
        throw std::invalid_argument("energy: transmission dimensions differ from context");
    for (double v : t.data())
        if (!std::isfinite(v)) throw std::invalid_argument("energy: transmission must be finite");

    double smooth = 0.0;
    const MattingWeights& mw = ctx.weights;
    for (std::size_t win = 0; win < mw.windows(); ++win) {
        const double* blk = mw.block(win);
        double tw[9];
        for (int i = 0; i < 9; ++i) tw[i] = t[mw.member(win, i)];
        for (int k = 0; k < MattingWeights::kPairs; ++k) {
            const double d = tw[k / 9] - tw[k % 9];
            smooth += blk[k] * d * d;
        }
    }
    smooth *= 0.5;

    double fidelity = 0.0;
    for (std::size_t n = 0; n < t.size(); ++n) {
        const double d = t[n] - ctx.coarse[n];
        fidelity += d * d;
    }
    return (smooth + ctx.lambda * fidelity) * ctx.scale();
}

// Separate smoothness / fidelity terms, for reporting.
inline std::pair<double, double> energy_terms(const LossContext& ctx, const ScalarMap& t) {
    std::vector<double> lt(ctx.laplacian.n);
    ctx.laplacian.matvec(t.data(), lt);
    double smooth = 0.0, fidelity = 0.0;
    for (std::size_t n = 0; n < t.size(); ++n) {
        smooth += t[n] * lt[n];
        const double d = t[n] - ctx.coarse[n];
        fidelity += d * d;
    }
    return {smooth * ctx.scale(), ctx.lambda * fidelity * ctx.scale()};
}

// Exact gradient: 2 L t + 2 lambda (t - t~).
inline ScalarMap energy_gradient(const LossContext& ctx, const ScalarMap& t) {
    if (!t.same_size(ctx.coarse))
        throw std::invalid_argument("energy_gradient: transmission dimensions differ from context");

    std::vector<double> lt(ctx.laplacian.n);
    ctx.laplacian.matvec(t.data(), lt);
    ScalarMap g(t.height(), t.width());
    const double s = ctx.scale();
    for (std::size_t n = 0; n < t.size(); ++n)
        g[n] = s * (2.0 * lt[n] + 2.0 * ctx.lambda * (t[n] - ctx.coarse[n]));
    return g;
}

// Training objective: mean energy over the corpus.
inline double corpus_objective(const std::vector<LossContext>& contexts,
                               const std::vector<ScalarMap>& ts) {
    if (contexts.empty()) throw std::invalid_argument("corpus_objective: empty corpus");
    if (contexts.size() != ts.size())
        throw std::invalid_argument("corpus_objective: context/map count mismatch");
    double sum = 0.0;
    for (std::size_t m = 0; m < contexts.size(); ++m) sum += energy(contexts[m], ts[m]);
    return sum / static_cast<double>(contexts.size());
}

}  // namespace hazelab
