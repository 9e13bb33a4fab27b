// Command-line front end: train, ablate, eval-disentangle, gradcheck and
// export-codebooks.

#include <cstdio>
#include <exception>
#include <fstream>
#include <string>

#include <CLI11.hpp>

#include "vorvq/harness.hpp"

using namespace vorvq;

namespace {

int run_train(const std::string& config_path) {
    const harness::ExperimentConfig cfg = harness::ExperimentConfig::from_json_file(config_path);
    const harness::TrainOutcome outcome = harness::train(cfg);
    std::printf("trained %d steps, final loss %.6g, clean mse %.6g\n", cfg.training_steps,
                outcome.final_metrics.loss_total, outcome.final_metrics.clean_mse);
    std::printf("metrics: %s\n", outcome.metrics_path.c_str());
    std::printf("bundle:  %s\n", outcome.bundle_path.c_str());
    return 0;
}

int run_ablate(const std::string& config_path) {
    const harness::ExperimentConfig cfg = harness::ExperimentConfig::from_json_file(config_path);
    const auto rows = harness::ablate(cfg);
    std::printf("%-12s %-14s %-10s %-12s %-10s\n", "variant", "clean_mse", "accuracy",
                "macro_recall", "macro_f1");
    for (const auto& row : rows) {
        if (row.clustering) {
            std::printf("%-12s %-14.6g %-10.4f %-12.4f %-10.4f\n",
                        harness::to_string(row.variant).c_str(), row.clean_mse,
                        row.clustering->accuracy, row.clustering->macro_recall,
                        row.clustering->macro_f1);
        } else {
            std::printf("%-12s %-14.6g %-10s %-12s %-10s\n",
                        harness::to_string(row.variant).c_str(), row.clean_mse, "-", "-", "-");
        }
    }
    std::printf("table: %s/ablation.csv\n", cfg.out_dir.c_str());
    return 0;
}

int run_eval(const std::string& bundle_path, uint64_t seed) {
    const auto metrics = harness::eval_disentangle_bundle(bundle_path, seed);
    std::printf("accuracy      %.4f\n", metrics.accuracy);
    std::printf("macro_recall  %.4f\n", metrics.macro_recall);
    std::printf("macro_f1      %.4f\n", metrics.macro_f1);
    return 0;
}

int run_gradcheck() {
    const harness::GradCheckReport report = harness::gradcheck_all();
    for (const auto& r : report.results)
        std::printf("%-26s max_rel_err %.3e  %s\n", r.op.c_str(), r.max_rel_err,
                    r.pass ? "ok" : "FAIL");
    if (!report.all_pass()) {
        std::printf("gradcheck: FAILURES PRESENT\n");
        return 1;
    }
    std::printf("gradcheck: all ops pass\n");
    return 0;
}

int run_export(const std::string& bundle_path, const std::string& out_path) {
    // validates magic + CRC on load, then re-emits the codebook file
    const CodebookBundle bundle = load_codebook_bundle(bundle_path);
    save_codebook_bundle(out_path, bundle.cfg, bundle.proj, bundle.codebooks);
    std::printf("wrote %s (%d stages, d_full %d)\n", out_path.c_str(), bundle.cfg.n_stages,
                bundle.cfg.d_full);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"variance-ordered residual vector quantization workbench"};
    app.require_subcommand(1);

    std::string config_path, bundle_path, out_path;
    uint64_t seed = 0;

    CLI::App* train = app.add_subcommand("train", "train a model from a JSON config");
    train->add_option("--config", config_path, "path to config JSON")->required();

    CLI::App* ablate =
        app.add_subcommand("ablate", "train continuous/rvq/vo_rvq variants and compare");
    ablate->add_option("--config", config_path, "path to config JSON")->required();

    CLI::App* eval =
        app.add_subcommand("eval-disentangle", "cluster enhanced vs noise embeddings");
    eval->add_option("--bundle", bundle_path, "path to model.vorvq")->required();
    eval->add_option("--seed", seed, "evaluation seed")->required();

    app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");

    CLI::App* exp = app.add_subcommand("export-codebooks", "re-emit the binary codebook bundle");
    exp->add_option("--bundle", bundle_path, "path to model.vorvq")->required();
    exp->add_option("--out", out_path, "output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return run_train(config_path);
        if (ablate->parsed()) return run_ablate(config_path);
        if (eval->parsed()) return run_eval(bundle_path, seed);
        if (app.get_subcommand("gradcheck")->parsed()) return run_gradcheck();
        if (exp->parsed()) return run_export(bundle_path, out_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
