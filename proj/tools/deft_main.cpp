#include <CLI11.hpp>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "deft/cli.hpp"

namespace {

// Every flag mirrors a config key; command-line values override the file.
struct Command {
    CLI::App* app = nullptr;
    std::string config_path;
    std::map<std::string, std::shared_ptr<std::string>> values;
    int (*entry)(deft::KvConfig&) = nullptr;

    void add_keys(const std::vector<std::pair<std::string, std::string>>& keys) {
        for (const auto& [key, help] : keys) {
            auto storage = std::make_shared<std::string>();
            values[key] = storage;
            app->add_option("--" + key, *storage, help);
        }
    }

    int run() const {
        deft::KvConfig cfg = config_path.empty() ? deft::KvConfig() : deft::KvConfig::from_file(config_path);
        for (const auto& [key, storage] : values)
            if (app->count("--" + key) > 0) cfg.set(key, *storage);
        return entry(cfg);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deft: disentanglement lab (datasets, training, annealing, metrics)"};
    app.require_subcommand(1);

    std::vector<std::shared_ptr<Command>> commands;
    auto make = [&](const std::string& name, const std::string& desc, int (*entry)(deft::KvConfig&)) {
        auto cmd = std::make_shared<Command>();
        cmd->app = app.add_subcommand(name, desc);
        cmd->entry = entry;
        cmd->app->add_option("--config", cmd->config_path, "key=value config file");
        commands.push_back(cmd);
        return cmd;
    };

    auto generate = make("generate", "render a labeled factor dataset", deft::cli::cmd_generate);
    generate->add_keys({{"out", "output dataset path"},
                        {"kind", "grid | triangle"},
                        {"resolution", "image resolution (power of two >= 16)"},
                        {"shape", "shape cardinality (1 fixes it)"},
                        {"scale", "scale cardinality"},
                        {"orientation", "orientation cardinality"},
                        {"posx", "posX cardinality"},
                        {"posy", "posY cardinality"},
                        {"grid", "triangle dataset position grid"},
                        {"orientation_bins", "triangle orientation bins"}});

    auto train = make("train", "train DEFT or a baseline objective", deft::cli::cmd_train);
    train->add_keys({{"dataset", "input dataset path"},
                     {"out", "output directory (one subdir per seed)"},
                     {"mode", "deft | baseline"},
                     {"seeds", "comma-separated seed list"},
                     {"trace_every", "trace row interval"},
                     {"groups", "encoder groups G"},
                     {"latents_per_group", "latents per group K"},
                     {"betas", "per-stage pressures, comma-separated"},
                     {"gamma", "backward scale for inactive encoders"},
                     {"epochs_per_stage", "epochs per stage"},
                     {"steps_per_stage", "steps per stage"},
                     {"learning_rate", "Adam learning rate"},
                     {"batch_size", "minibatch size"},
                     {"objective", "elbo|beta_vae|annealed_vae|beta_tcvae|cascade_vaec"},
                     {"beta", "KL pressure"},
                     {"beta_low", "cascade low pressure"},
                     {"beta_high", "cascade high pressure"},
                     {"c_max", "annealed capacity maximum"},
                     {"gamma_cap", "annealed capacity penalty weight"},
                     {"latent_dim", "baseline latent dimension"},
                     {"epochs", "baseline epochs"},
                     {"steps", "baseline steps"}});

    auto anneal = make("anneal", "annealing test / IFP distributions", deft::cli::cmd_anneal);
    anneal->add_keys({{"dataset", "input dataset path"},
                      {"out", "output directory"},
                      {"mode", "supervised | unsupervised"},
                      {"factor", "factor name (supervised mode)"},
                      {"repeats", "repeats for the IFP distribution"},
                      {"beta_start", "initial pressure"},
                      {"beta_end", "final pressure"},
                      {"iters", "annealing steps"},
                      {"probe_interval", "steps between probes"},
                      {"latent_dim", "probe model latent dimension"},
                      {"learning_rate", "Adam learning rate"},
                      {"batch_size", "minibatch size"},
                      {"seed", "root seed"},
                      {"threshold", "IFP detection threshold (nats)"},
                      {"save_curves", "write per-repeat curves"}});

    auto evaluate = make("evaluate", "score checkpoints of a run", deft::cli::cmd_evaluate);
    evaluate->add_keys({{"run", "run directory (sidecar + checkpoints)"},
                        {"dataset", "labeled dataset path"},
                        {"bins", "latent discretization bins"},
                        {"samples", "sample cap (0 = all)"},
                        {"out", "output directory (default: run dir)"}});

    auto traverse = make("traverse", "latent traversal image grid", deft::cli::cmd_traverse);
    traverse->add_keys({{"run", "run directory"},
                        {"dataset", "dataset for the base image"},
                        {"checkpoint", "checkpoint path (default: last)"},
                        {"image", "base image index"},
                        {"steps", "traversal steps per latent"},
                        {"range", "traversal half-range"},
                        {"out", "output PGM path"}});

    auto report = make("report", "aggregate MIG/NMI over runs", deft::cli::cmd_report);
    report->add_keys({{"runs", "comma-separated run directories"},
                      {"parent", "directory whose subdirectories are runs"},
                      {"threshold", "failure-rate MIG threshold"},
                      {"out", "output CSV path"}});

    CLI11_PARSE(app, argc, argv);

    try {
        for (const auto& cmd : commands)
            if (cmd->app->parsed()) return cmd->run();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
