#include "vorvq/synthdata.hpp"

#include <cmath>

#include "vorvq/kernels.hpp"
#include "vorvq/rng.hpp"

namespace vorvq::synthdata {

namespace {

uint64_t mix(uint64_t seed, uint64_t salt) {
    uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
}

}  // namespace

TwoSourceBatch gen_two_source(int frames, int dim, int rank_clean, double variance_ratio,
                              uint64_t seed, uint64_t batch_index) {
    VORVQ_CHECK(frames >= 1 && dim >= 1, "two_source: frames and dim must be positive");
    VORVQ_CHECK(rank_clean >= 1 && rank_clean <= dim, "two_source: rank must be in [1, dim]");
    // +inf is a valid limit: the noise scale degenerates to zero
    VORVQ_CHECK(!std::isnan(variance_ratio) && variance_ratio > 0.0,
                "two_source: variance ratio must be positive");

    // loading depends on the seed only; expected total clean variance is 1
    Rng loading_rng(mix(seed, 0));
    Mat loading = randn(loading_rng, rank_clean, dim);
    double frob2 = 0.0;
    for (double v : loading.data) frob2 += v * v;
    VORVQ_CHECK(frob2 > 0.0, "two_source: degenerate loading matrix");
    const double loading_scale = 1.0 / std::sqrt(frob2);
    for (double& v : loading.data) v *= loading_scale;

    Rng draw_rng(mix(seed, 1 + batch_index));
    const Mat factors = randn(draw_rng, frames, rank_clean);

    TwoSourceBatch batch;
    batch.variance_ratio = variance_ratio;
    batch.seed = seed;
    kernels::matmul(factors, loading, batch.clean);

    // isotropic noise with expected total variance 1/ratio
    const double noise_std = std::sqrt(1.0 / (variance_ratio * dim));
    batch.noise = randn(draw_rng, frames, dim, noise_std);

    batch.mixture = Mat(frames, dim);
    for (size_t i = 0; i < batch.mixture.data.size(); ++i)
        batch.mixture.data[i] = batch.clean.data[i] + batch.noise.data[i];
    return batch;
}

std::pair<std::vector<double>, std::vector<double>> gen_noisy_waveform(double duration_s,
                                                                       double sample_rate,
                                                                       double snr_db,
                                                                       uint64_t seed) {
    VORVQ_CHECK(duration_s > 0.0, "waveform: duration must be positive");
    VORVQ_CHECK(sample_rate > 0.0, "waveform: sample rate must be positive");
    const size_t n = static_cast<size_t>(duration_s * sample_rate);
    VORVQ_CHECK(n >= 2, "waveform: too short");

    const double two_pi = 6.283185307179586476925286766559;
    Rng rng(mix(seed, 7));
    std::vector<double> clean(n, 0.0);
    for (int s = 0; s < 3; ++s) {
        const double freq = 100.0 + rng.uniform() * (0.25 * sample_rate - 100.0);
        const double amp = 0.2 + 0.8 * rng.uniform();
        const double phase = two_pi * rng.uniform();
        for (size_t i = 0; i < n; ++i)
            clean[i] += amp * std::sin(two_pi * freq * static_cast<double>(i) / sample_rate + phase);
    }

    std::vector<double> white(n);
    for (double& x : white) x = rng.normal();

    double p_clean = 0.0, p_white = 0.0;
    for (size_t i = 0; i < n; ++i) {
        p_clean += clean[i] * clean[i];
        p_white += white[i] * white[i];
    }
    p_clean /= static_cast<double>(n);
    p_white /= static_cast<double>(n);

    // scale so the measured powers hit the requested SNR exactly
    double scale = 0.0;
    if (std::isfinite(snr_db)) {
        const double target_noise_power = p_clean / std::pow(10.0, snr_db / 10.0);
        scale = std::sqrt(target_noise_power / p_white);
    }

    std::vector<double> noisy(n);
    for (size_t i = 0; i < n; ++i) noisy[i] = clean[i] + scale * white[i];
    return {std::move(clean), std::move(noisy)};
}

}  // namespace vorvq::synthdata
