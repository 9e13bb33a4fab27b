#pragma once

// Shared fixtures and independent oracles for the unit and acceptance
// suites. Oracle code deliberately re-derives results with naive loops and
// never calls the library's forward paths.

#include <cmath>
#include <vector>

#include "vorvq/quantizer.hpp"
#include "vorvq/rng.hpp"

namespace testutil {

using vorvq::Codebook;
using vorvq::Mat;
using vorvq::Projections;
using vorvq::Rng;
using vorvq::VorvqConfig;

inline Codebook make_codebook(int stage_index, const std::vector<std::vector<double>>& rows) {
    Codebook cb;
    cb.stage_index = stage_index;
    cb.vectors = Mat(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < rows[r].size(); ++c)
            cb.vectors(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
    cb.usage_counts.assign(cb.size(), 0);
    cb.unused_steps.assign(cb.size(), 0);
    return cb;
}

struct BruteForceResult {
    Mat y_q;
    std::vector<std::vector<int>> codes;  // [stage][frame]
    Mat final_residual;
};

// independent re-implementation of the masked residual cascade: naive dot
// products, exhaustive per-stage argmin over every code, lowest index wins
inline BruteForceResult brute_force_cascade(const Mat& y_c, const VorvqConfig& cfg,
                                            const Projections& proj,
                                            const std::vector<Codebook>& codebooks,
                                            bool accumulate_all) {
    BruteForceResult out;
    out.y_q = Mat(y_c.rows, cfg.d_latent);
    out.codes.assign(cfg.n_stages, std::vector<int>(y_c.rows, 0));
    out.final_residual = y_c;

    for (int t = 0; t < y_c.rows; ++t) {
        std::vector<double> residual(y_c.row(t), y_c.row(t) + cfg.d_latent);
        std::vector<double> accum(cfg.d_latent, 0.0);
        for (int i = 0; i < cfg.n_stages; ++i) {
            const int d_i = cfg.d_sched[i];
            std::vector<double> z(cfg.d_full);
            for (int c = 0; c < cfg.d_full; ++c) {
                double acc = 0.0;
                for (int k = 0; k < cfg.d_latent; ++k) acc += residual[k] * proj.in_weight(k, c);
                z[c] = acc + proj.in_bias[c];
            }
            int best = 0;
            double best_dist = 0.0;
            for (int code = 0; code < codebooks[i].size(); ++code) {
                double dist = 0.0;
                for (int c = 0; c < d_i; ++c) {
                    const double diff = z[c] - codebooks[i].vectors(code, c);
                    dist += diff * diff;
                }
                if (code == 0 || dist < best_dist) {
                    best_dist = dist;
                    best = code;
                }
            }
            out.codes[i][t] = best;

            std::vector<double> padded(cfg.d_full, 0.0);
            for (int c = 0; c < d_i; ++c) padded[c] = codebooks[i].vectors(best, c);
            std::vector<double> yq(cfg.d_latent);
            for (int c = 0; c < cfg.d_latent; ++c) {
                double acc = 0.0;
                for (int k = 0; k < cfg.d_full; ++k) acc += padded[k] * proj.out_weight(k, c);
                yq[c] = acc + proj.out_bias[c];
            }
            if (accumulate_all || i < cfg.n_enhanced)
                for (int c = 0; c < cfg.d_latent; ++c) accum[c] += yq[c];
            for (int c = 0; c < cfg.d_latent; ++c) residual[c] -= yq[c];
        }
        for (int c = 0; c < cfg.d_latent; ++c) {
            out.y_q(t, c) = accum[c];
            out.final_residual(t, c) = residual[c];
        }
    }
    return out;
}

// random but valid quantizer setup for property tests
struct RandomSetup {
    VorvqConfig cfg;
    Projections proj;
    std::vector<Codebook> codebooks;
    Mat y_c;
};

inline RandomSetup random_setup(Rng& rng, int max_frames = 8, int max_dfull = 3, int max_codes = 4,
                                int max_stages = 3) {
    RandomSetup s;
    const int frames = 1 + static_cast<int>(rng.below(max_frames));
    const int d_full = 1 + static_cast<int>(rng.below(max_dfull));
    const int d_latent = 1 + static_cast<int>(rng.below(3));
    const int n_stages = 1 + static_cast<int>(rng.below(max_stages));
    const int n_enhanced = 1 + static_cast<int>(rng.below(n_stages));

    s.cfg.n_stages = n_stages;
    s.cfg.n_enhanced = n_enhanced;
    s.cfg.n_noise = n_stages - n_enhanced;
    s.cfg.d_latent = d_latent;
    s.cfg.d_full = d_full;
    s.cfg.d_sched = VorvqConfig::linear_d_sched(n_stages, d_full);
    for (int i = 0; i < n_stages; ++i)
        s.cfg.codebook_sizes.push_back(2 + static_cast<int>(rng.below(max_codes - 1)));
    s.cfg.seed = rng.next_u64();
    s.cfg.validate();

    s.proj.in_weight = vorvq::randn(rng, d_latent, d_full);
    s.proj.in_bias.resize(d_full);
    for (double& v : s.proj.in_bias) v = rng.normal() * 0.1;
    s.proj.out_weight = vorvq::randn(rng, d_full, d_latent);
    s.proj.out_bias.resize(d_latent);
    for (double& v : s.proj.out_bias) v = rng.normal() * 0.1;

    for (int i = 0; i < n_stages; ++i) {
        Codebook cb;
        cb.stage_index = i + 1;
        cb.vectors = vorvq::randn(rng, s.cfg.codebook_sizes[i], s.cfg.d_sched[i]);
        cb.usage_counts.assign(cb.size(), 0);
        cb.unused_steps.assign(cb.size(), 0);
        s.codebooks.push_back(std::move(cb));
    }
    s.y_c = vorvq::randn(rng, frames, d_latent);
    return s;
}

}  // namespace testutil
