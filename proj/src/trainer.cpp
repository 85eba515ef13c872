#include "deft/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "deft/checkpoint.hpp"

namespace deft {

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

struct Batcher {
    std::vector<int> order;
    std::size_t cursor = 0;

    explicit Batcher(int n) : order(static_cast<std::size_t>(n)) {
        for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    }

    std::vector<int> next(int batch_size, Rng& rng) {
        if (cursor >= order.size()) {
            rng.shuffle(order);
            cursor = 0;
        }
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                                       order.size() - cursor);
        std::vector<int> out(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                             order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
        cursor += take;
        return out;
    }
};

TraceRow make_row(long iteration, int stage, const std::string& objective,
                  const LossBreakdown<float>& lb) {
    TraceRow row;
    row.iteration = iteration;
    row.stage = stage;
    row.objective = objective;
    row.total = lb.total;
    row.recon = lb.recon;
    row.kl_total = lb.kl_total;
    row.kl_per_dim = lb.kl_per_dim;
    row.capacity = lb.capacity;
    row.mutual_info = lb.mutual_info;
    row.total_correlation = lb.total_correlation;
    row.dimwise_kl = lb.dimwise_kl;
    return row;
}

}  // namespace

void StageSchedule::validate() const {
    if (groups < 1 || latents_per_group < 1)
        throw std::invalid_argument("schedule: groups and latents per group must be >= 1");
    if (static_cast<int>(betas.size()) != groups)
        throw std::invalid_argument("schedule: need one beta per stage");
    for (std::size_t i = 1; i < betas.size(); ++i)
        if (!(betas[i] < betas[i - 1]))
            throw std::invalid_argument("schedule: betas must be strictly decreasing");
    for (double b : betas)
        if (b < 0) throw std::invalid_argument("schedule: betas must be >= 0");
    if (gamma < 0 || gamma > 1) throw std::invalid_argument("schedule: gamma must be in [0,1]");
    if ((epochs_per_stage > 0) == (steps_per_stage > 0))
        throw std::invalid_argument("schedule: set exactly one of epochs_per_stage / steps_per_stage");
    if (learning_rate <= 0 || batch_size < 1) throw std::invalid_argument("schedule: bad optimizer settings");
}

long StageSchedule::resolved_steps_per_stage(int dataset_size) const {
    if (steps_per_stage > 0) return steps_per_stage;
    const long per_epoch = (dataset_size + batch_size - 1) / batch_size;
    return static_cast<long>(epochs_per_stage) * per_epoch;
}

void TrainingTrace::write_csv(const std::string& path, int latent_dim) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);
    out << "iteration,stage,objective,total,recon,kl_total";
    for (int j = 0; j < latent_dim; ++j) out << ",kl_dim" << j;
    out << ",capacity,mi,tc,dwkl,mig,nmi1,nmi2,checkpoint\n";
    for (const TraceRow& r : rows) {
        out << r.iteration << ',' << r.stage << ',' << r.objective << ',' << format_double(r.total)
            << ',' << format_double(r.recon) << ',' << format_double(r.kl_total);
        for (int j = 0; j < latent_dim; ++j)
            out << ',' << (j < static_cast<int>(r.kl_per_dim.size())
                               ? format_double(r.kl_per_dim[static_cast<std::size_t>(j)])
                               : std::string());
        out << ',' << opt_cell(r.capacity) << ',' << opt_cell(r.mutual_info) << ','
            << opt_cell(r.total_correlation) << ',' << opt_cell(r.dimwise_kl);
        if (r.metrics) {
            out << ',' << format_double((*r.metrics)[0]) << ',' << format_double((*r.metrics)[1]) << ','
                << format_double((*r.metrics)[2]);
        } else {
            out << ",,,";
        }
        out << ',' << r.checkpoint << '\n';
    }
    if (!out) throw std::runtime_error("trace write failed: " + path);
}

LossBreakdown<float> deft_compute_gradients(VaeModel<float>& model, const Tensor<float>& images,
                                            const Tensor<float>& noise, int stage_j, double beta,
                                            double gamma) {
    if (stage_j < 1 || stage_j > model.groups)
        throw std::invalid_argument("deft_compute_gradients: stage out of range");
    Tape<float> tape;
    LossBreakdown<float> lb = beta_vae_loss(tape, model, images, noise, beta);
    tape.backward(lb.total_id);
    if (gamma != 1.0) {
        for (int g = 0; g < model.groups; ++g) {
            if (g == stage_j - 1) continue;
            auto params = model.encoder_parameters(g);
            scale_gradients(params, static_cast<float>(gamma));
        }
    }
    return lb;
}

void deft_apply_update(VaeModel<float>& model, double learning_rate) {
    auto params = model.parameters();
    adam_step(params, static_cast<float>(learning_rate));
}

LossBreakdown<float> deft_update_step(VaeModel<float>& model, const Tensor<float>& images,
                                      const Tensor<float>& noise, int stage_j, double beta, double gamma,
                                      double learning_rate) {
    LossBreakdown<float> lb = deft_compute_gradients(model, images, noise, stage_j, beta, gamma);
    deft_apply_update(model, learning_rate);
    return lb;
}

RunResult run_deft(const StageSchedule& schedule, const LabeledDataset& dataset,
                   const RunOptions& options) {
    schedule.validate();
    dataset.validate();
    Rng init_rng(derive_seed(schedule.seed, 0));
    Rng train_rng(derive_seed(schedule.seed, 1));

    VaeModel<float> model = build_deft_model<float>(schedule.groups, schedule.latents_per_group,
                                                    dataset.resolution(), dataset.channels(), init_rng);
    const int d = model.latent_dim();
    const long stage_steps = schedule.resolved_steps_per_stage(dataset.n());
    if (stage_steps < 1) throw std::invalid_argument("run_deft: empty stage step budget");

    if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

    RunResult result{TrainingTrace{}, std::move(model), {}};
    Batcher batcher(dataset.n());
    long iteration = 0;
    for (int stage = 1; stage <= schedule.groups; ++stage) {
        result.model.reset_encoder_optimizer_state();
        const double beta = schedule.betas[static_cast<std::size_t>(stage - 1)];
        for (long s = 0; s < stage_steps; ++s) {
            const std::vector<int> idx = batcher.next(schedule.batch_size, train_rng);
            Tensor<float> images = dataset.gather_images(idx);
            Tensor<float> noise =
                normal_tensor<float>(train_rng, {static_cast<int>(idx.size()), d});
            LossBreakdown<float> lb = deft_update_step(result.model, images, noise, stage, beta,
                                                       schedule.gamma, schedule.learning_rate);
            ++iteration;
            const bool last = (s + 1 == stage_steps);
            if (iteration % options.trace_every == 0 || last) {
                TraceRow row = make_row(iteration, stage, "deft", lb);
                if (last) {
                    if (options.metric_probe) row.metrics = options.metric_probe(result.model);
                    if (!options.out_dir.empty()) {
                        char name[64];
                        std::snprintf(name, sizeof(name), "checkpoint_stage_%02d.ckpt", stage);
                        const std::string path = options.out_dir + "/" + name;
                        auto params = result.model.parameters();
                        save_checkpoint(path, params);
                        result.checkpoints.push_back(path);
                        row.checkpoint = name;
                    }
                }
                result.trace.rows.push_back(std::move(row));
            }
        }
        if (options.on_stage_end) options.on_stage_end(stage, result.model);
    }
    if (!options.out_dir.empty()) result.trace.write_csv(options.out_dir + "/trace.csv", d);
    return result;
}

void BaselineConfig::validate() const {
    static const std::vector<std::string> known = {"elbo", "beta_vae", "annealed_vae", "beta_tcvae",
                                                   "cascade_vaec"};
    if (std::find(known.begin(), known.end(), objective) == known.end())
        throw std::invalid_argument("unknown objective: " + objective);
    if (latent_dim < 1) throw std::invalid_argument("baseline: latent_dim must be >= 1");
    if ((epochs > 0) == (steps > 0))
        throw std::invalid_argument("baseline: set exactly one of epochs / steps");
    if (learning_rate <= 0 || batch_size < 1) throw std::invalid_argument("baseline: bad optimizer settings");
}

RunResult run_baseline(const BaselineConfig& config, const LabeledDataset& dataset,
                       const RunOptions& options) {
    config.validate();
    dataset.validate();
    Rng init_rng(derive_seed(config.seed, 0));
    Rng train_rng(derive_seed(config.seed, 1));

    VaeModel<float> model =
        build_baseline_model<float>(config.latent_dim, dataset.resolution(), dataset.channels(), init_rng);
    const int d = model.latent_dim();
    const long per_epoch = (dataset.n() + config.batch_size - 1) / config.batch_size;
    const long total_steps = config.steps > 0 ? config.steps : config.epochs * per_epoch;
    if (total_steps < 1) throw std::invalid_argument("run_baseline: empty step budget");

    if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

    RunResult result{TrainingTrace{}, std::move(model), {}};
    auto params = result.model.parameters();
    Batcher batcher(dataset.n());
    for (long step = 0; step < total_steps; ++step) {
        const std::vector<int> idx = batcher.next(config.batch_size, train_rng);
        Tensor<float> images = dataset.gather_images(idx);
        Tensor<float> noise = normal_tensor<float>(train_rng, {static_cast<int>(idx.size()), d});

        Tape<float> tape;
        LossBreakdown<float> lb;
        int stage = 1;
        if (config.objective == "elbo") {
            lb = elbo_loss(tape, result.model, images, noise);
        } else if (config.objective == "beta_vae") {
            lb = beta_vae_loss(tape, result.model, images, noise, config.beta);
        } else if (config.objective == "annealed_vae") {
            const double c = capacity_schedule(static_cast<double>(step), static_cast<double>(total_steps),
                                               config.c_max);
            lb = annealed_vae_loss(tape, result.model, images, noise, c, config.gamma_cap);
        } else if (config.objective == "beta_tcvae") {
            lb = beta_tcvae_loss(tape, result.model, images, noise, config.beta, dataset.n());
        } else {
            stage = 1 + static_cast<int>((step * d) / total_steps);
            stage = std::min(stage, d);
            lb = cascade_vaec_loss(tape, result.model, images, noise, stage, config.beta_low,
                                   config.beta_high);
        }
        tape.backward(lb.total_id);
        adam_step(params, static_cast<float>(config.learning_rate));

        const long iteration = step + 1;
        const bool last = (iteration == total_steps);
        if (iteration % options.trace_every == 0 || last) {
            TraceRow row = make_row(iteration, stage, config.objective, lb);
            if (last) {
                if (options.metric_probe) row.metrics = options.metric_probe(result.model);
                if (!options.out_dir.empty()) {
                    const std::string path = options.out_dir + "/checkpoint_final.ckpt";
                    save_checkpoint(path, params);
                    result.checkpoints.push_back(path);
                    row.checkpoint = "checkpoint_final.ckpt";
                }
            }
            result.trace.rows.push_back(std::move(row));
        }
    }
    if (options.on_stage_end) options.on_stage_end(1, result.model);
    if (!options.out_dir.empty()) result.trace.write_csv(options.out_dir + "/trace.csv", d);
    return result;
}

}  // namespace deft
