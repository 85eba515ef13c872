#ifndef DEFT_TRAINER_HPP
#define DEFT_TRAINER_HPP

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deft/dataset.hpp"
#include "deft/objectives.hpp"

namespace deft {

// Multi-stage training plan: one encoder group per stage, pressures strictly
// decreasing so early stages face the tightest bottleneck.
struct StageSchedule {
    int groups = 2;
    int latents_per_group = 2;
    std::vector<double> betas;  // size == groups, strictly decreasing
    double gamma = 0.1;
    int epochs_per_stage = 0;  // exactly one of epochs/steps must be > 0
    int steps_per_stage = 0;
    double learning_rate = 5e-4;
    int batch_size = 64;
    std::uint64_t seed = 1;

    void validate() const;
    long resolved_steps_per_stage(int dataset_size) const;
};

struct TraceRow {
    long iteration = 0;
    int stage = 1;
    std::string objective;
    double total = 0, recon = 0, kl_total = 0;
    std::vector<double> kl_per_dim;
    std::optional<double> capacity, mutual_info, total_correlation, dimwise_kl;
    std::optional<std::array<double, 3>> metrics;  // mig, nmi1, nmi2
    std::string checkpoint;
};

struct TrainingTrace {
    std::vector<TraceRow> rows;
    void write_csv(const std::string& path, int latent_dim) const;
};

struct RunOptions {
    std::string out_dir;   // when set, checkpoints and trace.csv are written here
    int trace_every = 50;
    std::function<void(int stage, VaeModel<float>&)> on_stage_end;
    std::function<std::array<double, 3>(VaeModel<float>&)> metric_probe;  // optional snapshot
};

struct RunResult {
    TrainingTrace trace;
    VaeModel<float> model;
    std::vector<std::string> checkpoints;
};

// One gradient computation of the stage objective (the beta-pressure ELBO of
// the whole model) with every non-active encoder's raw gradient scaled by
// gamma before the optimizer sees it. stage_j is 1-based.
LossBreakdown<float> deft_compute_gradients(VaeModel<float>& model, const Tensor<float>& images,
                                            const Tensor<float>& noise, int stage_j, double beta,
                                            double gamma);
void deft_apply_update(VaeModel<float>& model, double learning_rate);
LossBreakdown<float> deft_update_step(VaeModel<float>& model, const Tensor<float>& images,
                                      const Tensor<float>& noise, int stage_j, double beta, double gamma,
                                      double learning_rate);

// Algorithm: for each stage j, train the whole model on the beta_j objective
// for the stage's step budget; encoder optimizer moments reset at stage
// boundaries. Fully reproducible from the schedule seed.
RunResult run_deft(const StageSchedule& schedule, const LabeledDataset& dataset,
                   const RunOptions& options = {});

struct BaselineConfig {
    std::string objective = "beta_vae";  // elbo|beta_vae|annealed_vae|beta_tcvae|cascade_vaec
    double beta = 4.0;
    double beta_low = 1.0, beta_high = 10.0;  // cascade_vaec
    double c_max = 25.0, gamma_cap = 1000.0;  // annealed_vae
    int latent_dim = 10;
    int epochs = 0;
    int steps = 0;
    double learning_rate = 5e-4;
    int batch_size = 64;
    std::uint64_t seed = 1;

    void validate() const;
};

// Single standard encoder/decoder trained with the named objective.
// CascadeVAEC advances its free dimension on an even split of the step
// budget; AnnealedVAE ramps C linearly over it.
RunResult run_baseline(const BaselineConfig& config, const LabeledDataset& dataset,
                       const RunOptions& options = {});

}  // namespace deft

#endif
