#pragma once

// Training objective: the order-inducing objective, semantic alignment,
// InfoNCE and the weighted total. Loss builders append to a Tape and return
// scalar node ids; pure helpers evaluate without a tape where no gradient
// is needed.

#include <optional>
#include <utility>
#include <vector>

#include "vorvq/dsp.hpp"
#include "vorvq/gradcore.hpp"
#include "vorvq/mat.hpp"

namespace vorvq::losses {

struct LossWeights {
    double lambda_ord = 1.0;
    double lambda_stft = 1.0;
    double lambda_adv = 0.0;
    double lambda_align = 1.0;
    double alpha = 1.0;   // weight of the L2 alignment term inside the align block
    double beta = 0.25;   // commitment weight
    double tau = 0.07;    // InfoNCE temperature

    void validate() const;
};

// per-stage handles into the training graph: the masked continuous
// representation and the gathered codebook rows (differentiable w.r.t. the
// codebook leaf)
struct StageNodes {
    int zc_hat = -1;
    int zq_embed = -1;
};

// codebook + commitment terms, Frobenius norms averaged over frames:
//   sum_i ||sg[zc_i] - zq_i||^2 / T  +  beta * sum_i ||zc_i - sg[zq_i]||^2 / T
int stage_terms_node(grad::Tape& tape, const std::vector<StageNodes>& stages, double beta);

// reconstruction on latent frames (plain L2, mean over frames) plus the
// stage terms
int ordered_objective_latent(grad::Tape& tape, int decoded, int target,
                             const std::vector<StageNodes>& stages, double beta);

// reconstruction through mel magnitudes plus the stage terms
int ordered_objective_waveform(grad::Tape& tape, int decoded_wave,
                               const std::vector<double>& target_wave,
                               const dsp::MelConfig& mel_cfg,
                               const std::vector<StageNodes>& stages, double beta);

// alignment targets from the frozen synthetic teacher; computed from clean
// targets only and never updated during training
struct TeacherEmbedding {
    Mat features;  // T x d_teacher
};

TeacherEmbedding teacher_embed(const Mat& clean_frames, const Mat& teacher_w,
                               const Mat& teacher_b);

// || proj(y_q) - teacher ||^2, summed over features, averaged over frames
int semantic_l2_node(grad::Tape& tape, int projected, int teacher);
double semantic_l2_value(const Mat& projected, const Mat& teacher);

// rows must be unit-norm (checked to 1e-6); log-sum-exp stabilized
int infonce_node(grad::Tape& tape, int f_fake, int f_real, double tau);
double infonce_value(const Mat& f_fake, const Mat& f_real, double tau);

Mat l2_normalize(const Mat& features);  // rows to unit norm, zero row throws

struct LossComponents {
    double l_ord = 0.0;
    double l_stft = 0.0;
    double l_nce = 0.0;
    double l_sem = 0.0;
    std::optional<double> l_adv;  // out of scope at desk scale; never supplied
};

double total_loss(const LossComponents& c, const LossWeights& w);

// node ids may be -1 for absent terms; lambda_adv must be 0 (no adversarial
// path exists at desk scale)
int total_loss_node(grad::Tape& tape, int l_ord, int l_stft, int l_nce, int l_sem,
                    const LossWeights& w);

inline const std::vector<std::pair<int, int>> kDefaultStftResolutions = {
    {256, 64}, {512, 128}, {1024, 256}};

// mean over resolutions of the mean L1 distance between STFT magnitudes
double multires_stft_loss(const std::vector<double>& a, const std::vector<double>& b,
                          const std::vector<std::pair<int, int>>& resolutions);
int multires_stft_node(grad::Tape& tape, int wave, const std::vector<double>& target,
                       const std::vector<std::pair<int, int>>& resolutions);

}  // namespace vorvq::losses
