#include "vorvq/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "vorvq/kernels.hpp"

namespace vorvq {

void VorvqConfig::validate() const {
    VORVQ_CHECK(n_stages >= 0, "config: negative stage count");
    VORVQ_CHECK(n_enhanced >= 0 && n_noise >= 0, "config: negative stage split");
    VORVQ_CHECK(n_enhanced + n_noise == n_stages, "config: N_e + N_n must equal N");
    VORVQ_CHECK(d_latent > 0 && d_full > 0, "config: dimensions must be positive");
    VORVQ_CHECK(static_cast<int>(d_sched.size()) == n_stages, "config: d_sched length != N");
    VORVQ_CHECK(static_cast<int>(codebook_sizes.size()) == n_stages,
                "config: codebook_sizes length != N");
    for (int i = 0; i < n_stages; ++i) {
        VORVQ_CHECK(d_sched[i] > 0, "config: d_sched entries must be positive");
        VORVQ_CHECK(d_sched[i] <= d_full, "config: d_sched entry exceeds d_full");
        if (i > 0) VORVQ_CHECK(d_sched[i] >= d_sched[i - 1], "config: d_sched must be non-decreasing");
        VORVQ_CHECK(codebook_sizes[i] >= 2, "config: codebooks need at least 2 codes");
    }
    if (n_stages > 0) VORVQ_CHECK(d_sched.back() == d_full, "config: final d_sched entry != d_full");
}

std::vector<int> VorvqConfig::linear_d_sched(int n_stages, int d_full) {
    std::vector<int> d(n_stages);
    for (int i = 1; i <= n_stages; ++i)
        d[i - 1] = static_cast<int>((static_cast<int64_t>(i) * d_full + n_stages - 1) / n_stages);
    return d;
}

VorvqConfig VorvqConfig::make(int n_stages, int n_enhanced, int d_latent, int d_full, int codes,
                              uint64_t seed) {
    VorvqConfig cfg;
    cfg.n_stages = n_stages;
    cfg.n_enhanced = n_enhanced;
    cfg.n_noise = n_stages - n_enhanced;
    cfg.d_latent = d_latent;
    cfg.d_full = d_full;
    cfg.d_sched = linear_d_sched(n_stages, d_full);
    cfg.codebook_sizes.assign(n_stages, codes);
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

void Codebook::note_step(const std::vector<int64_t>& step_usage) {
    VORVQ_CHECK(static_cast<int>(step_usage.size()) == size(), "note_step: usage length mismatch");
    if (usage_counts.empty()) usage_counts.assign(size(), 0);
    if (unused_steps.empty()) unused_steps.assign(size(), 0);
    for (int k = 0; k < size(); ++k) {
        usage_counts[k] += step_usage[k];
        unused_steps[k] = (step_usage[k] == 0) ? unused_steps[k] + 1 : 0;
    }
}

Projections Projections::identity(int d_latent, int d_full) {
    Projections p;
    p.in_weight = Mat(d_latent, d_full);
    const int n = std::min(d_latent, d_full);
    for (int i = 0; i < n; ++i) p.in_weight(i, i) = 1.0;
    p.in_bias.assign(d_full, 0.0);
    p.out_weight = Mat(d_full, d_latent);
    for (int i = 0; i < n; ++i) p.out_weight(i, i) = 1.0;
    p.out_bias.assign(d_latent, 0.0);
    return p;
}

std::pair<int, std::vector<double>> nearest_code(const std::vector<double>& v, const Codebook& cb) {
    VORVQ_CHECK(static_cast<int>(v.size()) == cb.dim(), "nearest_code: dimension mismatch");
    for (double x : v) VORVQ_CHECK(std::isfinite(x), "nearest_code: non-finite input");
    Mat q(1, cb.dim());
    std::copy(v.begin(), v.end(), q.row(0));
    int idx = 0;
    double dist = 0.0;
    kernels::nearest_rows_serial(q, cb.vectors, &idx, &dist);
    std::vector<double> code(cb.vectors.row(idx), cb.vectors.row(idx) + cb.dim());
    return {idx, code};
}

Mat kmeans_pp_init(const Mat& data, int k, uint64_t seed) {
    VORVQ_CHECK(k >= 1, "kmeans_pp_init: k must be positive");
    VORVQ_CHECK(data.rows >= k, "kmeans_pp_init: fewer rows than centers");
    VORVQ_CHECK(data.cols >= 1, "kmeans_pp_init: empty vectors");

    Rng rng(seed);
    std::vector<int> chosen;
    chosen.reserve(k);
    std::vector<char> taken(data.rows, 0);

    const int first = static_cast<int>(rng.below(static_cast<uint64_t>(data.rows)));
    chosen.push_back(first);
    taken[first] = 1;

    std::vector<double> d2(data.rows);
    for (int i = 0; i < data.rows; ++i) {
        double acc = 0.0;
        for (int c = 0; c < data.cols; ++c) {
            const double diff = data(i, c) - data(first, c);
            acc += diff * diff;
        }
        d2[i] = acc;
    }

    while (static_cast<int>(chosen.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < data.rows; ++i)
            if (!taken[i]) total += d2[i];
        int next = -1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double run = 0.0;
            for (int i = 0; i < data.rows; ++i) {
                if (taken[i]) continue;
                run += d2[i];
                if (run > target) {
                    next = i;
                    break;
                }
            }
            if (next < 0) {  // rounding pushed target past the last mass
                for (int i = data.rows - 1; i >= 0; --i)
                    if (!taken[i] && d2[i] > 0.0) {
                        next = i;
                        break;
                    }
            }
        }
        if (next < 0) {  // remaining rows duplicate chosen centers
            for (int i = 0; i < data.rows; ++i)
                if (!taken[i]) {
                    next = i;
                    break;
                }
        }
        chosen.push_back(next);
        taken[next] = 1;
        for (int i = 0; i < data.rows; ++i) {
            if (taken[i]) {
                d2[i] = 0.0;
                continue;
            }
            double acc = 0.0;
            for (int c = 0; c < data.cols; ++c) {
                const double diff = data(i, c) - data(next, c);
                acc += diff * diff;
            }
            d2[i] = std::min(d2[i], acc);
        }
    }

    Mat centers(k, data.cols);
    for (int j = 0; j < k; ++j)
        std::copy(data.row(chosen[j]), data.row(chosen[j]) + data.cols, centers.row(j));
    return centers;
}

namespace {

void check_setup(const Mat& y_c, const VorvqConfig& cfg, const Projections& proj,
                 const std::vector<Codebook>& codebooks) {
    cfg.validate();
    VORVQ_CHECK(y_c.cols == cfg.d_latent, "forward: frame dimension != d_latent");
    VORVQ_CHECK(all_finite(y_c), "forward: non-finite input frames");
    VORVQ_CHECK(static_cast<int>(codebooks.size()) == cfg.n_stages,
                "forward: codebook count != N");
    VORVQ_CHECK(proj.in_weight.rows == cfg.d_latent && proj.in_weight.cols == cfg.d_full,
                "forward: proj_in shape mismatch");
    VORVQ_CHECK(proj.out_weight.rows == cfg.d_full && proj.out_weight.cols == cfg.d_latent,
                "forward: proj_out shape mismatch");
    for (int i = 0; i < cfg.n_stages; ++i) {
        VORVQ_CHECK(codebooks[i].stage_index == i + 1, "forward: codebook stage index mismatch");
        VORVQ_CHECK(codebooks[i].dim() == cfg.d_sched[i], "forward: codebook dim != d_sched");
        VORVQ_CHECK(codebooks[i].size() == cfg.codebook_sizes[i],
                    "forward: codebook size mismatch");
        VORVQ_CHECK(all_finite(codebooks[i].vectors), "forward: non-finite codebook");
    }
}

// shared cascade; `accumulate_all` switches between VO-RVQ (enhanced only)
// and plain RVQ accumulation
Mat cascade_forward(const Mat& y_c, const VorvqConfig& cfg, const Projections& proj,
                    const std::vector<Codebook>& codebooks, bool accumulate_all,
                    QuantizationTrace* trace) {
    check_setup(y_c, cfg, proj, codebooks);
    const int frames = y_c.rows;

    Mat bias_in(1, cfg.d_full);
    std::copy(proj.in_bias.begin(), proj.in_bias.end(), bias_in.row(0));
    Mat bias_out(1, cfg.d_latent);
    std::copy(proj.out_bias.begin(), proj.out_bias.end(), bias_out.row(0));

    Mat residual = y_c;
    Mat y_q(frames, cfg.d_latent);
    if (trace) {
        *trace = QuantizationTrace{};
        trace->zc_hat.resize(cfg.n_stages);
        trace->zq_hat.resize(cfg.n_stages);
        trace->codes.resize(cfg.n_stages);
        trace->yq.resize(cfg.n_stages);
        trace->residual.resize(cfg.n_stages);
    }

    Mat z, zq_pad, yq_i;
    std::vector<int> codes(frames);
    std::vector<double> dists(frames);
    for (int i = 0; i < cfg.n_stages; ++i) {
        const int d_i = cfg.d_sched[i];
        kernels::matmul(residual, proj.in_weight, z);
        for (int t = 0; t < frames; ++t) {
            double* zr = z.row(t);
            for (int c = 0; c < cfg.d_full; ++c) zr[c] += bias_in(0, c);
        }
        Mat zc_hat(frames, d_i);
        for (int t = 0; t < frames; ++t)
            std::copy(z.row(t), z.row(t) + d_i, zc_hat.row(t));

        kernels::nearest_rows(zc_hat, codebooks[i].vectors, codes.data(), dists.data());

        Mat zq_hat(frames, d_i);
        zq_pad = Mat(frames, cfg.d_full);
        for (int t = 0; t < frames; ++t) {
            const double* code = codebooks[i].vectors.row(codes[t]);
            std::copy(code, code + d_i, zq_hat.row(t));
            std::copy(code, code + d_i, zq_pad.row(t));
        }

        kernels::matmul(zq_pad, proj.out_weight, yq_i);
        for (int t = 0; t < frames; ++t) {
            double* yr = yq_i.row(t);
            for (int c = 0; c < cfg.d_latent; ++c) yr[c] += bias_out(0, c);
        }

        const bool accumulate = accumulate_all || (i < cfg.n_enhanced);
        if (accumulate)
            for (size_t e = 0; e < y_q.data.size(); ++e) y_q.data[e] += yq_i.data[e];
        for (size_t e = 0; e < residual.data.size(); ++e) residual.data[e] -= yq_i.data[e];

        if (trace) {
            trace->zc_hat[i] = std::move(zc_hat);
            trace->zq_hat[i] = std::move(zq_hat);
            trace->codes[i] = codes;
            trace->yq[i] = yq_i;
            trace->residual[i] = residual;
        }
    }
    if (trace) trace->y_q = y_q;
    return y_q;
}

}  // namespace

StageResult quantize_stage(const std::vector<double>& residual, int stage_index,
                           const VorvqConfig& cfg, const Projections& proj, const Codebook& cb) {
    VORVQ_CHECK(stage_index >= 1 && stage_index <= cfg.n_stages, "quantize_stage: bad stage index");
    VORVQ_CHECK(cb.stage_index == stage_index, "quantize_stage: codebook belongs to another stage");
    VORVQ_CHECK(static_cast<int>(residual.size()) == cfg.d_latent,
                "quantize_stage: residual dimension mismatch");
    for (double x : residual) VORVQ_CHECK(std::isfinite(x), "quantize_stage: non-finite input");
    const int d_i = cfg.d_sched[stage_index - 1];
    VORVQ_CHECK(cb.dim() == d_i, "quantize_stage: codebook dim != d_sched");

    StageResult out;
    std::vector<double> z(cfg.d_full);
    for (int c = 0; c < cfg.d_full; ++c) {
        double acc = 0.0;
        for (int k = 0; k < cfg.d_latent; ++k) acc += residual[k] * proj.in_weight(k, c);
        z[c] = acc + proj.in_bias[c];
    }
    out.zc_hat.assign(z.begin(), z.begin() + d_i);
    auto [code, vec] = nearest_code(out.zc_hat, cb);
    out.code = code;
    out.zq_hat = vec;

    std::vector<double> padded(cfg.d_full, 0.0);
    std::copy(vec.begin(), vec.end(), padded.begin());
    out.yq.assign(cfg.d_latent, 0.0);
    for (int c = 0; c < cfg.d_latent; ++c) {
        double acc = 0.0;
        for (int k = 0; k < cfg.d_full; ++k) acc += padded[k] * proj.out_weight(k, c);
        out.yq[c] = acc + proj.out_bias[c];
    }
    return out;
}

Mat vo_rvq_forward(const Mat& y_c, const VorvqConfig& cfg, const Projections& proj,
                   const std::vector<Codebook>& codebooks, QuantizationTrace* trace) {
    return cascade_forward(y_c, cfg, proj, codebooks, /*accumulate_all=*/false, trace);
}

Mat rvq_forward(const Mat& y_c, const VorvqConfig& cfg, const Projections& proj,
                const std::vector<Codebook>& codebooks, QuantizationTrace* trace) {
    for (int i = 0; i < cfg.n_stages; ++i)
        VORVQ_CHECK(cfg.d_sched[i] == cfg.d_full, "rvq_forward: masked schedule passed to baseline");
    return cascade_forward(y_c, cfg, proj, codebooks, /*accumulate_all=*/true, trace);
}

LatentSequence vo_rvq_forward(const LatentSequence& y_c, const VorvqConfig& cfg,
                              const Projections& proj, const std::vector<Codebook>& codebooks,
                              QuantizationTrace* trace) {
    return {vo_rvq_forward(y_c.frames, cfg, proj, codebooks, trace), y_c.frame_rate};
}

LatentSequence rvq_forward(const LatentSequence& y_c, const VorvqConfig& cfg,
                           const Projections& proj, const std::vector<Codebook>& codebooks,
                           QuantizationTrace* trace) {
    return {rvq_forward(y_c.frames, cfg, proj, codebooks, trace), y_c.frame_rate};
}

Mat decode_codes(const std::vector<std::vector<int>>& codes, const VorvqConfig& cfg,
                 const Projections& proj, const std::vector<Codebook>& codebooks) {
    cfg.validate();
    VORVQ_CHECK(static_cast<int>(codes.size()) == cfg.n_stages, "decode: stage count mismatch");
    VORVQ_CHECK(static_cast<int>(codebooks.size()) == cfg.n_stages, "decode: codebook count mismatch");
    const int frames = cfg.n_stages > 0 ? static_cast<int>(codes[0].size()) : 0;

    Mat bias_out(1, cfg.d_latent);
    std::copy(proj.out_bias.begin(), proj.out_bias.end(), bias_out.row(0));

    Mat y_q(frames, cfg.d_latent);
    Mat zq_pad, yq_i;
    for (int i = 0; i < cfg.n_enhanced; ++i) {
        VORVQ_CHECK(static_cast<int>(codes[i].size()) == frames, "decode: ragged code sequences");
        const int d_i = cfg.d_sched[i];
        zq_pad = Mat(frames, cfg.d_full);
        for (int t = 0; t < frames; ++t) {
            const int code = codes[i][t];
            VORVQ_CHECK(code >= 0 && code < codebooks[i].size(), "decode: code index out of range");
            std::copy(codebooks[i].vectors.row(code), codebooks[i].vectors.row(code) + d_i,
                      zq_pad.row(t));
        }
        kernels::matmul(zq_pad, proj.out_weight, yq_i);
        for (int t = 0; t < frames; ++t) {
            double* yr = yq_i.row(t);
            for (int c = 0; c < cfg.d_latent; ++c) yr[c] += bias_out(0, c);
        }
        for (size_t e = 0; e < y_q.data.size(); ++e) y_q.data[e] += yq_i.data[e];
    }
    return y_q;
}

void refresh_dead_codes(Codebook& cb, const Mat& recent_batch, int threshold, uint64_t seed) {
    VORVQ_CHECK(threshold >= 1, "refresh: threshold must be >= 1");
    VORVQ_CHECK(recent_batch.rows >= 1, "refresh: empty batch");
    VORVQ_CHECK(recent_batch.cols == cb.dim(), "refresh: batch dimension mismatch");
    if (cb.unused_steps.empty()) return;

    Rng rng(seed);
    for (int k = 0; k < cb.size(); ++k) {
        if (cb.unused_steps[k] < threshold) continue;
        const int row = static_cast<int>(rng.below(static_cast<uint64_t>(recent_batch.rows)));
        std::copy(recent_batch.row(row), recent_batch.row(row) + cb.dim(), cb.vectors.row(k));
        cb.unused_steps[k] = 0;
        cb.usage_counts[k] = 0;
    }
}

}  // namespace vorvq
