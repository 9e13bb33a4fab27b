#pragma once

// Residual vector quantization with variance ordering.
//
// The variance-ordered quantizer projects each stage's residual into a
// shared d_full-dimensional space, keeps only the first d_i coordinates
// (the triangular mask, d_i non-decreasing across stages), quantizes them
// against that stage's codebook, zero-pads back to d_full and projects out.
// All N stages update the residual chain; the returned sequence accumulates
// only the first n_enhanced stages, so the trailing stages absorb what the
// enhanced stages leave behind without ever contributing to the output.
//
// Plain RVQ is the same cascade with every mask open and every stage
// accumulated.

#include <cstdint>
#include <string>
#include <vector>

#include "vorvq/mat.hpp"
#include "vorvq/rng.hpp"

namespace vorvq {

struct VorvqConfig {
    int n_stages = 0;    // N
    int n_enhanced = 0;  // N_e, stages summed into the output
    int n_noise = 0;     // N_n = N - N_e
    int d_latent = 0;
    int d_full = 0;
    std::vector<int> d_sched;         // per-stage kept dims, non-decreasing, last == d_full
    std::vector<int> codebook_sizes;  // per-stage K
    uint64_t seed = 0;

    void validate() const;

    // d_i = ceil(i * d_full / N)
    static std::vector<int> linear_d_sched(int n_stages, int d_full);
    static VorvqConfig make(int n_stages, int n_enhanced, int d_latent, int d_full, int codes,
                            uint64_t seed);
};

struct Codebook {
    int stage_index = 0;  // 1-based
    Mat vectors;          // K x d_sched[stage]
    std::vector<int64_t> usage_counts;   // uses since the code was last refreshed
    std::vector<int> unused_steps;       // consecutive optimizer steps with zero usage

    int dim() const { return vectors.cols; }
    int size() const { return vectors.rows; }

    // fold one optimizer step's per-code usage into the counters
    void note_step(const std::vector<int64_t>& step_usage);
};

struct Projections {
    Mat in_weight;                // d_latent x d_full
    std::vector<double> in_bias;  // d_full
    Mat out_weight;               // d_full x d_latent
    std::vector<double> out_bias;  // d_latent

    static Projections identity(int d_latent, int d_full);
};

struct LatentSequence {
    Mat frames;  // T x D
    double frame_rate = 0.0;
};

// per-stage tensors recorded by a forward pass, one row per time frame
struct QuantizationTrace {
    std::vector<Mat> zc_hat;        // T x d_i, masked continuous
    std::vector<Mat> zq_hat;        // T x d_i, masked quantized
    std::vector<std::vector<int>> codes;
    std::vector<Mat> yq;            // T x d_latent, per-stage output
    std::vector<Mat> residual;      // T x d_latent, residual after the stage
    Mat y_q;                        // T x d_latent, enhanced accumulation
};

// argmin-L2 lookup; ties break to the lowest index
std::pair<int, std::vector<double>> nearest_code(const std::vector<double>& v, const Codebook& cb);

// k-means++ seeding: K distinct rows of data, first uniform, the rest
// weighted by squared distance to the nearest chosen center
Mat kmeans_pp_init(const Mat& data, int k, uint64_t seed);

struct StageResult {
    int code = 0;
    std::vector<double> yq;      // d_latent
    std::vector<double> zc_hat;  // d_i
    std::vector<double> zq_hat;  // d_i
};

StageResult quantize_stage(const std::vector<double>& residual, int stage_index,
                           const VorvqConfig& cfg, const Projections& proj, const Codebook& cb);

// the masked cascade over a whole sequence: all stages update the
// residual, the output accumulates stages i <= n_enhanced only
Mat vo_rvq_forward(const Mat& y_c, const VorvqConfig& cfg, const Projections& proj,
                   const std::vector<Codebook>& codebooks, QuantizationTrace* trace = nullptr);

// baseline: no masking (requires d_sched all equal d_full), all stages accumulated
Mat rvq_forward(const Mat& y_c, const VorvqConfig& cfg, const Projections& proj,
                const std::vector<Codebook>& codebooks, QuantizationTrace* trace = nullptr);

// sequence-typed wrappers, frame rate carried through
LatentSequence vo_rvq_forward(const LatentSequence& y_c, const VorvqConfig& cfg,
                              const Projections& proj, const std::vector<Codebook>& codebooks,
                              QuantizationTrace* trace = nullptr);
LatentSequence rvq_forward(const LatentSequence& y_c, const VorvqConfig& cfg,
                           const Projections& proj, const std::vector<Codebook>& codebooks,
                           QuantizationTrace* trace = nullptr);

// dequantize serialized codes; reproduces vo_rvq_forward's output bit for bit
Mat decode_codes(const std::vector<std::vector<int>>& codes, const VorvqConfig& cfg,
                 const Projections& proj, const std::vector<Codebook>& codebooks);

// replace codes unused for `threshold` consecutive steps with rows sampled
// from recent_batch (already in the stage's masked dimensionality)
void refresh_dead_codes(Codebook& cb, const Mat& recent_batch, int threshold, uint64_t seed);

// ---- codebook bundle serialization ------------------------------------
//
// Layout: magic "VORVQ1\0\0"; u32 N, N_e, D_latent, d_full; N pairs of
// u32 (d_i, K_i); proj_in matrix+bias, proj_out matrix+bias, then each
// codebook's vectors, all row-major little-endian f64; trailing CRC32 of
// every preceding byte.

std::vector<uint8_t> serialize_codebook_bundle(const VorvqConfig& cfg, const Projections& proj,
                                               const std::vector<Codebook>& codebooks);

struct CodebookBundle {
    VorvqConfig cfg;
    Projections proj;
    std::vector<Codebook> codebooks;
};

CodebookBundle deserialize_codebook_bundle(const std::vector<uint8_t>& bytes);

void save_codebook_bundle(const std::string& path, const VorvqConfig& cfg,
                          const Projections& proj, const std::vector<Codebook>& codebooks);
CodebookBundle load_codebook_bundle(const std::string& path);

}  // namespace vorvq
