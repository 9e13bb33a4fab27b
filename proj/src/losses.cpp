#include "vorvq/losses.hpp"

#include <cmath>

#include "vorvq/kernels.hpp"

namespace vorvq::losses {

void LossWeights::validate() const {
    for (double w : {lambda_ord, lambda_stft, lambda_adv, lambda_align, alpha, beta}) {
        VORVQ_CHECK(std::isfinite(w), "weights: non-finite weight");
        VORVQ_CHECK(w >= 0.0, "weights: negative weight");
    }
    VORVQ_CHECK(std::isfinite(tau) && tau > 0.0, "weights: tau must be positive");
}

int stage_terms_node(grad::Tape& tape, const std::vector<StageNodes>& stages, double beta) {
    int total = -1;
    for (const StageNodes& s : stages) {
        const int frames = tape.value(s.zc_hat).rows;
        VORVQ_CHECK(tape.value(s.zq_embed).rows == frames, "stage_terms: frame count mismatch");
        const double inv_t = 1.0 / static_cast<double>(frames);
        const int codebook_term =
            tape.scale(tape.sum(tape.square(tape.sub(tape.stop_grad(s.zc_hat), s.zq_embed))),
                       inv_t);
        const int commit_term =
            tape.scale(tape.sum(tape.square(tape.sub(s.zc_hat, tape.stop_grad(s.zq_embed)))),
                       beta * inv_t);
        const int both = tape.add(codebook_term, commit_term);
        total = (total < 0) ? both : tape.add(total, both);
    }
    if (total < 0) total = tape.constant(Mat(1, 1, 0.0));
    return total;
}

int ordered_objective_latent(grad::Tape& tape, int decoded, int target,
                             const std::vector<StageNodes>& stages, double beta) {
    VORVQ_CHECK(tape.value(decoded).same_shape(tape.value(target)),
                "ordered_objective: decoded/target shape mismatch");
    const int frames = tape.value(decoded).rows;
    const int recon = tape.scale(tape.sum(tape.square(tape.sub(decoded, target))),
                                 1.0 / static_cast<double>(frames));
    return tape.add(recon, stage_terms_node(tape, stages, beta));
}

int ordered_objective_waveform(grad::Tape& tape, int decoded_wave,
                               const std::vector<double>& target_wave,
                               const dsp::MelConfig& mel_cfg,
                               const std::vector<StageNodes>& stages, double beta) {
    const int recon = dsp::mel_l2_node(tape, decoded_wave, target_wave, mel_cfg);
    return tape.add(recon, stage_terms_node(tape, stages, beta));
}

TeacherEmbedding teacher_embed(const Mat& clean_frames, const Mat& teacher_w,
                               const Mat& teacher_b) {
    VORVQ_CHECK(clean_frames.cols == teacher_w.rows, "teacher: input dimension mismatch");
    VORVQ_CHECK(teacher_b.rows == 1 && teacher_b.cols == teacher_w.cols,
                "teacher: bias shape mismatch");
    TeacherEmbedding out;
    kernels::matmul(clean_frames, teacher_w, out.features);
    for (int r = 0; r < out.features.rows; ++r) {
        double* row = out.features.row(r);
        for (int c = 0; c < out.features.cols; ++c) row[c] += teacher_b(0, c);
    }
    return out;
}

int semantic_l2_node(grad::Tape& tape, int projected, int teacher) {
    const int frames = tape.value(projected).rows;
    VORVQ_CHECK(frames == tape.value(teacher).rows, "semantic_l2: frame count mismatch");
    VORVQ_CHECK(tape.value(projected).cols == tape.value(teacher).cols,
                "semantic_l2: feature dimension mismatch");
    return tape.scale(tape.sum(tape.square(tape.sub(projected, teacher))),
                      1.0 / static_cast<double>(frames));
}

double semantic_l2_value(const Mat& projected, const Mat& teacher) {
    VORVQ_CHECK(projected.rows == teacher.rows, "semantic_l2: frame count mismatch");
    VORVQ_CHECK(projected.cols == teacher.cols, "semantic_l2: feature dimension mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < projected.data.size(); ++i) {
        const double d = projected.data[i] - teacher.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(projected.rows);
}

namespace {

void check_normalized_rows(const Mat& m, const char* what) {
    for (int r = 0; r < m.rows; ++r) {
        double norm2 = 0.0;
        const double* row = m.row(r);
        for (int c = 0; c < m.cols; ++c) norm2 += row[c] * row[c];
        VORVQ_CHECK(std::fabs(std::sqrt(norm2) - 1.0) <= 1e-6,
                    std::string(what) + ": rows must be L2-normalized");
    }
}

}  // namespace

int infonce_node(grad::Tape& tape, int f_fake, int f_real, double tau) {
    VORVQ_CHECK(tau > 0.0, "infonce: tau must be positive");
    // copy what we need: value() references go stale once new nodes append
    const int k_rows = tape.value(f_fake).rows;
    VORVQ_CHECK(k_rows >= 1, "infonce: need at least one row");
    VORVQ_CHECK(tape.value(f_fake).same_shape(tape.value(f_real)), "infonce: shape mismatch");
    check_normalized_rows(tape.value(f_fake), "infonce");
    check_normalized_rows(tape.value(f_real), "infonce");
    const int sims = tape.scale(tape.matmul_nt(f_fake, f_real), 1.0 / tau);
    const int lse = tape.logsumexp_rows(sims);
    const int pos = tape.take_diag(sims);
    return tape.scale(tape.sum(tape.sub(lse, pos)), 1.0 / static_cast<double>(k_rows));
}

double infonce_value(const Mat& f_fake, const Mat& f_real, double tau) {
    grad::Tape tape;
    const int a = tape.constant(f_fake);
    const int b = tape.constant(f_real);
    return tape.value(infonce_node(tape, a, b, tau))(0, 0);
}

Mat l2_normalize(const Mat& features) {
    Mat out(features.rows, features.cols);
    for (int r = 0; r < features.rows; ++r) {
        const double* x = features.row(r);
        double norm2 = 0.0;
        for (int c = 0; c < features.cols; ++c) norm2 += x[c] * x[c];
        VORVQ_CHECK(norm2 > 0.0, "l2_normalize: zero row");
        const double inv = 1.0 / std::sqrt(norm2);
        double* y = out.row(r);
        for (int c = 0; c < features.cols; ++c) y[c] = x[c] * inv;
    }
    return out;
}

double total_loss(const LossComponents& c, const LossWeights& w) {
    w.validate();
    for (double v : {c.l_ord, c.l_stft, c.l_nce, c.l_sem})
        VORVQ_CHECK(std::isfinite(v), "total_loss: non-finite component");
    VORVQ_CHECK(w.lambda_adv == 0.0 || c.l_adv.has_value(),
                "total_loss: lambda_adv is set but no adversarial loss exists");
    double total = w.lambda_ord * c.l_ord + w.lambda_stft * c.l_stft +
                   w.lambda_align * (c.l_nce + w.alpha * c.l_sem);
    if (c.l_adv.has_value()) total += w.lambda_adv * *c.l_adv;
    return total;
}

int total_loss_node(grad::Tape& tape, int l_ord, int l_stft, int l_nce, int l_sem,
                    const LossWeights& w) {
    w.validate();
    VORVQ_CHECK(w.lambda_adv == 0.0, "total_loss: no adversarial path at desk scale");
    int total = tape.constant(Mat(1, 1, 0.0));
    if (l_ord >= 0) total = tape.add(total, tape.scale(l_ord, w.lambda_ord));
    if (l_stft >= 0) total = tape.add(total, tape.scale(l_stft, w.lambda_stft));
    if (l_nce >= 0) total = tape.add(total, tape.scale(l_nce, w.lambda_align));
    if (l_sem >= 0) total = tape.add(total, tape.scale(l_sem, w.lambda_align * w.alpha));
    return total;
}

double multires_stft_loss(const std::vector<double>& a, const std::vector<double>& b,
                          const std::vector<std::pair<int, int>>& resolutions) {
    VORVQ_CHECK(a.size() == b.size(), "multires_stft: waveform length mismatch");
    VORVQ_CHECK(!resolutions.empty(), "multires_stft: empty resolution list");
    double acc = 0.0;
    for (const auto& [n_fft, hop] : resolutions) {
        const Mat ma = dsp::stft_magnitude(a, n_fft, hop);
        const Mat mb = dsp::stft_magnitude(b, n_fft, hop);
        double l1 = 0.0;
        for (size_t i = 0; i < ma.data.size(); ++i) l1 += std::fabs(ma.data[i] - mb.data[i]);
        acc += l1 / static_cast<double>(ma.numel());
    }
    return acc / static_cast<double>(resolutions.size());
}

int multires_stft_node(grad::Tape& tape, int wave, const std::vector<double>& target,
                       const std::vector<std::pair<int, int>>& resolutions) {
    VORVQ_CHECK(static_cast<size_t>(tape.value(wave).cols) == target.size(),
                "multires_stft: waveform length mismatch");
    VORVQ_CHECK(!resolutions.empty(), "multires_stft: empty resolution list");
    int total = -1;
    for (const auto& [n_fft, hop] : resolutions) {
        const int mag = tape.stft_mag(wave, n_fft, hop);
        const Mat target_mag = dsp::stft_magnitude(target, n_fft, hop);
        const int diff = tape.sub(mag, tape.constant(target_mag));
        const int term = tape.mean(tape.abs(diff));
        total = (total < 0) ? term : tape.add(total, term);
    }
    return tape.scale(total, 1.0 / static_cast<double>(resolutions.size()));
}

}  // namespace vorvq::losses
