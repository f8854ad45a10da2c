#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hazelab/dcp.hpp"
#include "hazelab/image.hpp"
#include "hazelab/loss.hpp"

namespace hazelab {

struct OptimizeConfig {
    double step_size = 0.0;       // <= 0 selects the automatic safe step
    int max_steps = 10000;
    double stop_energy_rel = 1e-9;  // stop when relative energy decrease falls below
    std::optional<double> init_constant;  // unset: init at the coarse map

    void validate() const {
        if (max_steps < 0) throw std::invalid_argument("OptimizeConfig: max_steps must be >= 0");
        if (stop_energy_rel < 0.0 || stop_energy_rel >= 1.0)
            throw std::invalid_argument("OptimizeConfig: stop_energy_rel must be in [0,1)");
    }
};

struct OptimizeResult {
    ScalarMap t;                 // best iterate by energy
    std::vector<double> trace;   // energy per step, including the initial value
    bool diverged = false;       // energy increased for 10 consecutive steps
};

// Automatic step size guaranteeing monotone descent: the energy Hessian is
// 2(L + lambda I), so any step below 1/(lambda_max(L) + lambda) works; the
// Gershgorin bound stands in for lambda_max.
inline double auto_step_size(const LossContext& ctx) {
    return 0.9 / (ctx.lambda + ctx.laplacian.gershgorin_bound());
}

// Plain gradient descent on the DCP energy. Returns the full energy trace so
// callers can stop early and observe the descent ordering.
inline OptimizeResult optimize_transmission(const LossContext& ctx, const OptimizeConfig& cfg) {
    cfg.validate();
    const double step = cfg.step_size > 0.0 ? cfg.step_size : auto_step_size(ctx);

    ScalarMap t = ctx.coarse;
    if (cfg.init_constant)
        std::fill(t.data().begin(), t.data().end(), *cfg.init_constant);

    OptimizeResult res;
    double e = energy(ctx, t);
    res.trace.push_back(e);
    res.t = t;
    double best_e = e;
    int rising = 0;

    for (int s = 0; s < cfg.max_steps; ++s) {
        const ScalarMap g = energy_gradient(ctx, t);
        for (std::size_t n = 0; n < t.size(); ++n) t[n] -= step * g[n];

        const double e_new = energy(ctx, t);
        res.trace.push_back(e_new);
        if (e_new < best_e) {
            best_e = e_new;
            res.t = t;
        }
        // tolerate rounding noise at the floor; real instability grows fast
        if (e_new > e + 1e-12 * (1.0 + std::abs(e))) {
            if (++rising >= 10) {
                res.diverged = true;
                return res;
            }
        } else {
            rising = 0;
            const double rel = (e - e_new) / std::max(e, 1e-300);
            if (rel < cfg.stop_energy_rel) {
                e = e_new;
                break;
            }
        }
        e = e_new;
    }
    return res;
}

// Full per-image pipeline: coarse estimate, energy minimization, reconstruction.
inline RgbImage dehaze_by_optimization(const RgbImage& img, const DcpParams& params,
                                       const OptimizeConfig& cfg) {
    const LossContext ctx = build_loss_context(img, params);
    const OptimizeResult opt = optimize_transmission(ctx, cfg);
    return recover_radiance(img, opt.t, ctx.airlight, params.t0);
}

}  // namespace hazelab
