#pragma once

// Experiment runner: trains the toy encoder / quantizer / decoder pipeline
// on synthetic two-source data with the full objective, evaluates
// disentanglement by spectral clustering, runs the
// continuous / RVQ / VO-RVQ ablation and the finite-difference gradient
// sweep, and serializes model bundles (binary codebooks + JSON sidecar).

#include <optional>
#include <string>
#include <vector>

#include "vorvq/disentangle.hpp"
#include "vorvq/dsp.hpp"
#include "vorvq/losses.hpp"
#include "vorvq/quantizer.hpp"

namespace vorvq::harness {

enum class Mode { kLatent, kWaveform };
enum class QuantizerKind { kContinuous, kRvq, kVoRvq };

std::string to_string(Mode m);
std::string to_string(QuantizerKind q);

struct ExperimentConfig {
    Mode mode = Mode::kLatent;
    QuantizerKind quantizer = QuantizerKind::kVoRvq;

    // toy model dimensions
    int d_in = 32;
    int d_latent = 16;
    int d_full = 16;
    int n_stages = 5;
    int n_enhanced = 4;
    int codebook_size = 64;
    int d_teacher = 768;

    // synthetic data
    int rank_clean = 8;
    double variance_ratio = 4.0;
    double snr_db = 10.0;  // waveform mode

    // training
    int training_steps = 250;
    int batch_size = 4;
    int frames_per_seq = 64;
    double learning_rate = 0.001;
    int log_interval = 10;
    int dead_code_threshold = 2;

    // evaluation
    int eval_frames = 2000;

    uint64_t model_seed = 1;
    uint64_t data_seed = 2;
    uint64_t eval_seed = 3;
    uint64_t teacher_seed = 97;

    std::string out_dir = "out";
    losses::LossWeights weights;
    dsp::MelConfig mel;

    void validate() const;
    VorvqConfig quantizer_config() const;  // masked schedule for VO-RVQ, open for RVQ

    std::string to_json_string() const;
    static ExperimentConfig from_json_string(const std::string& text);
    static ExperimentConfig from_json_file(const std::string& path);
};

struct ToyModel {
    Mat enc_w, enc_b;      // d_in x d_latent, 1 x d_latent
    Mat dec_w, dec_b;      // d_latent x d_in, 1 x d_in
    Projections proj;
    std::vector<Codebook> codebooks;
    Mat align_w, align_b;  // d_latent x d_teacher, 1 x d_teacher
    Mat teacher_w, teacher_b;  // frozen, d_in x d_teacher
};

// deterministic initialization, including k-means++ codebooks seeded from
// the first training batch's projected residuals
ToyModel init_model(const ExperimentConfig& cfg);

struct MetricsRecord {
    int step = 0;
    double loss_total = 0.0;
    double loss_ord = 0.0;
    double loss_stft = 0.0;
    double loss_nce = 0.0;
    double loss_sem = 0.0;
    double clean_mse = 0.0;
    std::vector<double> perplexity;  // per stage; empty for continuous
};

struct TrainOutcome {
    ToyModel model;
    MetricsRecord final_metrics;
    std::vector<MetricsRecord> history;
    std::string bundle_path;   // <out_dir>/model.vorvq (empty in continuous mode)
    std::string sidecar_path;  // <out_dir>/model.json
    std::string metrics_path;  // <out_dir>/metrics.csv
};

TrainOutcome train(const ExperimentConfig& cfg);

// reconstruction of the clean component, averaged over frames and features
double eval_clean_mse(const ToyModel& model, const ExperimentConfig& cfg);

disentangle::ClusteringMetrics eval_disentangle(const ToyModel& model,
                                                const ExperimentConfig& cfg);
disentangle::ClusteringMetrics eval_disentangle_bundle(const std::string& bundle_path,
                                                       uint64_t eval_seed);

// per-frame embeddings fed to the clustering step: y_q rows labelled 0,
// noise-stage sums labelled 1
disentangle::LabeledEmbeddings extract_embeddings(const ToyModel& model,
                                                  const ExperimentConfig& cfg);

struct AblationRow {
    QuantizerKind variant;
    double clean_mse = 0.0;
    std::optional<disentangle::ClusteringMetrics> clustering;  // absent for continuous
    std::optional<double> mean_perplexity;                     // absent for continuous
    double loss_slope = 0.0;  // linear-fit slope of the logged total loss
};

std::vector<AblationRow> ablate(const ExperimentConfig& base);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckResult> results;
    bool all_pass() const;
};

// finite-difference sweep over every differentiable op at seeded random
// points; threshold 1e-4 relative
GradCheckReport gradcheck_all(uint64_t seed = 42, int points_per_op = 100);

// model bundle IO: binary codebook file plus JSON sidecar next to it
void save_model(const std::string& bundle_path, const ToyModel& model,
                const ExperimentConfig& cfg);
std::pair<ToyModel, ExperimentConfig> load_model(const std::string& bundle_path);

// least-squares slope of (x, y) pairs; used for loss-trend assertions
double linear_fit_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace vorvq::harness
