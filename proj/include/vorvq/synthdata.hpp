#pragma once

// Deterministic two-source generators: a low-rank structured "clean"
// component plus isotropic noise at a controlled total-variance ratio, and
// a sinusoid-plus-noise waveform fixture for waveform-mode runs.

#include <cstdint>
#include <utility>
#include <vector>

#include "vorvq/mat.hpp"

namespace vorvq::synthdata {

struct TwoSourceBatch {
    Mat clean;    // T x D, rank-limited, total variance 1
    Mat noise;    // T x D, isotropic, total variance 1/variance_ratio
    Mat mixture;  // clean + noise, elementwise
    double variance_ratio = 0.0;
    uint64_t seed = 0;
};

// The loading matrix is drawn from `seed` alone, so batches that share a
// seed share the clean subspace; batch_index advances the factor/noise
// draws for fresh frames within the same dataset.
TwoSourceBatch gen_two_source(int frames, int dim, int rank_clean, double variance_ratio,
                              uint64_t seed, uint64_t batch_index = 0);

// clean = three random sinusoids, noisy = clean + white noise scaled so the
// measured SNR matches snr_db (infinite snr returns noise exactly zero)
std::pair<std::vector<double>, std::vector<double>> gen_noisy_waveform(double duration_s,
                                                                       double sample_rate,
                                                                       double snr_db,
                                                                       uint64_t seed);

}  // namespace vorvq::synthdata
