#include "deft/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

#include "deft/annealing.hpp"
#include "deft/checkpoint.hpp"
#include "deft/dataset.hpp"
#include "deft/io.hpp"
#include "deft/metrics.hpp"
#include "deft/trainer.hpp"

namespace fs = std::filesystem;

namespace deft {
namespace cli {

namespace {

float sigmoidf(float x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    const float e = std::exp(x);
    return e / (1.0f + e);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(line);
    while (std::getline(ss, item, ',')) out.push_back(item);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

std::vector<std::string> sorted_checkpoints(const std::string& run_dir) {
    if (!fs::is_directory(run_dir)) throw std::runtime_error("run directory not found: " + run_dir);
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(run_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".ckpt")
            out.push_back(entry.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

// Rebuilds the architecture a run directory was trained with, from its
// resolved-config sidecar. Parameter values come from the checkpoint.
VaeModel<float> model_from_run_dir(const std::string& run_dir, int resolution, int channels) {
    KvConfig side = KvConfig::from_file(run_dir + "/config.resolved");
    Rng scratch(1);
    const std::string mode = side.get_string("mode", "deft");
    if (mode == "deft") {
        const int groups = static_cast<int>(side.get_long("groups", 2));
        const int k = static_cast<int>(side.get_long("latents_per_group", 2));
        return build_deft_model<float>(groups, k, resolution, channels, scratch);
    }
    const int latent_dim = static_cast<int>(side.get_long("latent_dim", 10));
    return build_baseline_model<float>(latent_dim, resolution, channels, scratch);
}

std::string approach_label(const std::string& run_dir) {
    KvConfig side = KvConfig::from_file(run_dir + "/config.resolved");
    const std::string mode = side.get_string("mode", "deft");
    if (mode == "deft") return "deft";
    return side.get_string("objective", "beta_vae");
}

FactorSchema grid_schema_from_config(KvConfig& cfg) {
    FactorSchema schema;
    const std::vector<std::pair<std::string, long>> cards = {
        {"shape", cfg.get_long("shape", 1)},
        {"scale", cfg.get_long("scale", 1)},
        {"orientation", cfg.get_long("orientation", 1)},
        {"posX", cfg.get_long("posx", 8)},
        {"posY", cfg.get_long("posy", 8)},
    };
    for (const auto& [name, card] : cards) {
        if (card < 1) throw std::runtime_error("cardinality of " + name + " must be >= 1");
        if (card > 1) {
            Factor f{name, static_cast<int>(card), {}};
            if (name == "shape") {
                f.value_names = {"square", "ellipse", "triangle"};
                f.value_names.resize(static_cast<std::size_t>(std::min(card, 3L)));
            }
            schema.factors.push_back(std::move(f));
        }
    }
    if (schema.factors.empty()) throw std::runtime_error("grid dataset needs at least one factor with cardinality >= 2");
    return schema;
}

void write_schema_summary(const std::string& path, const LabeledDataset& ds) {
    std::ofstream out(path, std::ios::trunc);
    out << "samples=" << ds.n() << "\nresolution=" << ds.resolution() << "\nchannels=" << ds.channels()
        << "\n";
    for (const Factor& f : ds.schema.factors) {
        out << "factor " << f.name << " cardinality=" << f.cardinality;
        if (!f.value_names.empty()) {
            out << " values=";
            for (std::size_t i = 0; i < f.value_names.size(); ++i)
                out << (i ? "," : "") << f.value_names[i];
        }
        out << "\n";
    }
}

struct EvaluatedCheckpoint {
    std::string name;
    EvalResult eval;
    double recon = 0;
};

EvaluatedCheckpoint evaluate_checkpoint(const std::string& run_dir, const std::string& ckpt_path,
                                        const LabeledDataset& ds, int bins, int samples) {
    VaeModel<float> model = model_from_run_dir(run_dir, ds.resolution(), ds.channels());
    auto params = model.parameters();
    load_checkpoint(ckpt_path, params);
    EvaluatedCheckpoint out;
    out.name = fs::path(ckpt_path).filename().string();
    out.eval = evaluate_model(model, ds, bins, samples);
    out.recon = mean_reconstruction_error(model, ds, samples);
    return out;
}

void run_seeds_concurrently(const std::vector<std::function<void()>>& jobs) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const std::size_t workers = std::min<std::size_t>(hw, jobs.size());
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= jobs.size()) return;
                try {
                    jobs[i]();
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

int cmd_generate(KvConfig& cfg) {
    const std::string out = cfg.require_string("out");
    const std::string kind = cfg.get_string("kind", "grid");
    const int resolution = static_cast<int>(cfg.get_long("resolution", 16));
    LabeledDataset ds;
    if (kind == "grid") {
        ds = generate_grid_dataset(grid_schema_from_config(cfg), resolution);
    } else if (kind == "triangle") {
        const int grid = static_cast<int>(cfg.get_long("grid", 8));
        const int bins = static_cast<int>(cfg.get_long("orientation_bins", 8));
        ds = generate_triangle_correlated(resolution, grid, bins);
    } else {
        throw std::runtime_error("unknown dataset kind: " + kind);
    }
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    save_dataset(ds, out);
    write_schema_summary(out + ".schema.txt", ds);
    cfg.write_resolved(out + ".resolved.cfg");
    std::cout << "wrote " << out << " (" << ds.n() << " images @" << ds.resolution() << "px)\n";
    return 0;
}

int cmd_train(KvConfig& cfg) {
    const std::string dataset_path = cfg.require_string("dataset");
    const std::string out_root = cfg.require_string("out");
    const std::string mode = cfg.get_string("mode", "deft");
    const std::vector<std::string> seeds = cfg.get_list("seeds", "1");
    const int trace_every = static_cast<int>(cfg.get_long("trace_every", 50));
    if (seeds.empty()) throw std::runtime_error("train: empty seed list");
    const LabeledDataset ds = load_dataset(dataset_path);

    StageSchedule schedule;
    BaselineConfig baseline;
    if (mode == "deft") {
        schedule.groups = static_cast<int>(cfg.get_long("groups", 2));
        schedule.latents_per_group = static_cast<int>(cfg.get_long("latents_per_group", 2));
        schedule.betas = cfg.get_double_list("betas", "20,4");
        schedule.gamma = cfg.get_double("gamma", 0.1);
        schedule.epochs_per_stage = static_cast<int>(cfg.get_long("epochs_per_stage", 0));
        schedule.steps_per_stage = static_cast<int>(cfg.get_long("steps_per_stage", 0));
        if (schedule.epochs_per_stage == 0 && schedule.steps_per_stage == 0)
            schedule.steps_per_stage = 3000;
        schedule.learning_rate = cfg.get_double("learning_rate", 5e-4);
        schedule.batch_size = static_cast<int>(cfg.get_long("batch_size", 64));
        schedule.validate();
    } else if (mode == "baseline") {
        baseline.objective = cfg.get_string("objective", "beta_vae");
        baseline.beta = cfg.get_double("beta", 4.0);
        baseline.beta_low = cfg.get_double("beta_low", 1.0);
        baseline.beta_high = cfg.get_double("beta_high", 10.0);
        baseline.c_max = cfg.get_double("c_max", 25.0);
        baseline.gamma_cap = cfg.get_double("gamma_cap", 1000.0);
        baseline.latent_dim = static_cast<int>(cfg.get_long("latent_dim", 10));
        baseline.epochs = static_cast<int>(cfg.get_long("epochs", 0));
        baseline.steps = static_cast<int>(cfg.get_long("steps", 0));
        if (baseline.epochs == 0 && baseline.steps == 0) baseline.steps = 6000;
        baseline.learning_rate = cfg.get_double("learning_rate", 5e-4);
        baseline.batch_size = static_cast<int>(cfg.get_long("batch_size", 64));
        baseline.validate();
    } else {
        throw std::runtime_error("unknown train mode: " + mode);
    }

    std::vector<std::function<void()>> jobs;
    for (const std::string& seed_str : seeds) {
        const std::uint64_t seed = std::stoull(seed_str);
        const std::string run_dir = out_root + "/seed_" + seed_str;
        jobs.push_back([=, &ds, &cfg]() {
            fs::create_directories(run_dir);
            cfg.write_resolved(run_dir + "/config.resolved");
            // seed is appended so the sidecar alone reproduces this run
            {
                std::ofstream side(run_dir + "/config.resolved", std::ios::app);
                side << "resolved_seed=" << seed << "\n";
            }
            RunOptions options;
            options.out_dir = run_dir;
            options.trace_every = trace_every;
            if (mode == "deft") {
                StageSchedule s = schedule;
                s.seed = seed;
                run_deft(s, ds, options);
            } else {
                BaselineConfig b = baseline;
                b.seed = seed;
                run_baseline(b, ds, options);
            }
        });
    }
    run_seeds_concurrently(jobs);
    std::cout << "trained " << seeds.size() << " run(s) under " << out_root << "\n";
    return 0;
}

int cmd_anneal(KvConfig& cfg) {
    const std::string dataset_path = cfg.require_string("dataset");
    const std::string out_dir = cfg.require_string("out");
    const std::string mode = cfg.get_string("mode", "supervised");
    AnnealParams params;
    params.beta_start = cfg.get_double("beta_start", 200.0);
    params.beta_end = cfg.get_double("beta_end", 1.0);
    params.iters = static_cast<int>(cfg.get_long("iters", 5000));
    params.probe_interval = static_cast<int>(cfg.get_long("probe_interval", 50));
    params.latent_dim = static_cast<int>(cfg.get_long("latent_dim", 4));
    params.learning_rate = cfg.get_double("learning_rate", 5e-4);
    params.batch_size = static_cast<int>(cfg.get_long("batch_size", 64));
    params.seed = cfg.get_u64("seed", 1);
    params.validate();
    const double threshold = cfg.get_double("threshold", 0.1);

    const LabeledDataset ds = load_dataset(dataset_path);
    fs::create_directories(out_dir);

    auto write_curve = [](const std::string& path, const AnnealCurve& curve) {
        std::ofstream out(path, std::ios::trunc);
        out << "iteration,beta,mean_kl,recon\n";
        for (const AnnealProbe& p : curve.samples)
            out << p.iteration << ',' << format_csv_double(p.beta) << ','
                << format_csv_double(p.mean_kl) << ',' << format_csv_double(p.recon_error) << '\n';
    };

    if (mode == "supervised") {
        const std::string factor = cfg.require_string("factor");
        const int repeats = static_cast<int>(cfg.get_long("repeats", 50));
        const bool save_curves = cfg.get_bool("save_curves", true);
        const int factor_index = ds.schema.index_of(factor);
        if (factor_index < 0) throw std::runtime_error("dataset has no factor named " + factor);
        cfg.write_resolved(out_dir + "/config.resolved");

        std::ofstream ifp(out_dir + "/ifp.csv", std::ios::trunc);
        ifp << "repeat,factor,ifp_beta\n";
        std::vector<AnnealCurve> curves(static_cast<std::size_t>(repeats));
        std::vector<IfpSample> samples(static_cast<std::size_t>(repeats));
        std::vector<std::function<void()>> jobs;
        for (int r = 0; r < repeats; ++r) {
            jobs.push_back([&, r]() {
                Rng slice_rng(derive_seed(params.seed, 100 + static_cast<std::uint64_t>(r)));
                LabeledDataset slice = fixed_factor_batch(ds, factor_index, slice_rng);
                AnnealParams run = params;
                run.seed = derive_seed(params.seed, 1000 + static_cast<std::uint64_t>(r));
                curves[static_cast<std::size_t>(r)] = annealing_test(slice, run);
                samples[static_cast<std::size_t>(r)] =
                    detect_ifp(curves[static_cast<std::size_t>(r)], threshold);
            });
        }
        run_seeds_concurrently(jobs);
        for (int r = 0; r < repeats; ++r) {
            const IfpSample& s = samples[static_cast<std::size_t>(r)];
            ifp << r << ',' << factor << ','
                << (s.ifp_beta ? format_csv_double(*s.ifp_beta) : std::string()) << '\n';
            if (save_curves) {
                char name[32];
                std::snprintf(name, sizeof(name), "curve_r%03d.csv", r);
                write_curve(out_dir + "/" + name, curves[static_cast<std::size_t>(r)]);
            }
        }
        std::cout << "wrote " << out_dir << "/ifp.csv (" << repeats << " repeats)\n";
        return 0;
    }
    if (mode != "unsupervised") throw std::runtime_error("unknown anneal mode: " + mode);
    cfg.write_resolved(out_dir + "/config.resolved");
    AnnealCurve curve = annealing_test(ds, params);
    write_curve(out_dir + "/curve.csv", curve);
    std::ofstream inc(out_dir + "/increments.csv", std::ios::trunc);
    inc << "beta,kl_increment\n";
    for (const auto& [beta, dkl] : increment_curve(curve))
        inc << format_csv_double(beta) << ',' << format_csv_double(dkl) << '\n';
    std::cout << "wrote " << out_dir << "/curve.csv and increments.csv\n";
    return 0;
}

int cmd_evaluate(KvConfig& cfg) {
    const std::string run_dir = cfg.require_string("run");
    const std::string dataset_path = cfg.require_string("dataset");
    const int bins = static_cast<int>(cfg.get_long("bins", 20));
    const int samples = static_cast<int>(cfg.get_long("samples", 0));
    const std::string out_dir = cfg.get_string("out", run_dir);
    const LabeledDataset ds = load_dataset(dataset_path);

    const std::vector<std::string> ckpts = sorted_checkpoints(run_dir);
    if (ckpts.empty()) throw std::runtime_error("no checkpoints found in " + run_dir);
    fs::create_directories(out_dir);
    cfg.write_resolved(out_dir + "/evaluate.resolved.cfg");

    std::ofstream out(out_dir + "/metrics.csv", std::ios::trunc);
    out << "checkpoint,mig,nmi1,nmi2,recon";
    for (const Factor& f : ds.schema.factors)
        out << ",nmi1_" << f.name << ",nmi2_" << f.name << ",argmax_" << f.name;
    out << "\n";
    for (const std::string& ckpt : ckpts) {
        EvaluatedCheckpoint ec = evaluate_checkpoint(run_dir, ckpt, ds, bins, samples);
        out << ec.name << ',' << format_csv_double(ec.eval.report.mig) << ','
            << format_csv_double(ec.eval.report.nmi1) << ',' << format_csv_double(ec.eval.report.nmi2)
            << ',' << format_csv_double(ec.recon);
        for (int k = 0; k < ds.schema.num_factors(); ++k)
            out << ',' << format_csv_double(ec.eval.report.nmi_top1[static_cast<std::size_t>(k)]) << ','
                << format_csv_double(ec.eval.report.nmi_top2[static_cast<std::size_t>(k)]) << ','
                << ec.eval.report.argmax_latent[static_cast<std::size_t>(k)];
        out << "\n";

        const std::string stem = fs::path(ckpt).stem().string();
        std::ofstream mm(out_dir + "/mimatrix_" + stem + ".csv", std::ios::trunc);
        mm << "latent";
        for (const Factor& f : ds.schema.factors) mm << ',' << f.name;
        mm << "\n";
        for (int j = 0; j < ec.eval.matrix.num_latents; ++j) {
            mm << j;
            for (int k = 0; k < ec.eval.matrix.num_factors; ++k)
                mm << ',' << format_csv_double(ec.eval.matrix.at(j, k));
            mm << "\n";
        }
    }
    std::cout << "wrote " << out_dir << "/metrics.csv (" << ckpts.size() << " checkpoints)\n";
    return 0;
}

int cmd_traverse(KvConfig& cfg) {
    const std::string run_dir = cfg.require_string("run");
    const std::string dataset_path = cfg.require_string("dataset");
    const std::string out_path = cfg.get_string("out", run_dir + "/traversal.pgm");
    const int image_index = static_cast<int>(cfg.get_long("image", 0));
    const int steps = static_cast<int>(cfg.get_long("steps", 7));
    const double range = cfg.get_double("range", 2.0);
    const std::string ckpt = cfg.get_string("checkpoint", "");
    if (steps < 2) throw std::runtime_error("traverse: need at least 2 steps");

    const LabeledDataset ds = load_dataset(dataset_path);
    if (image_index < 0 || image_index >= ds.n()) throw std::runtime_error("traverse: image index out of range");
    VaeModel<float> model = model_from_run_dir(run_dir, ds.resolution(), ds.channels());
    auto params = model.parameters();
    const std::vector<std::string> ckpts = sorted_checkpoints(run_dir);
    if (ckpts.empty()) throw std::runtime_error("no checkpoints found in " + run_dir);
    load_checkpoint(ckpt.empty() ? ckpts.back() : ckpt, params);

    const int d = model.latent_dim();
    const int res = ds.resolution();
    std::vector<double> base = encode_means(model, ds, {image_index});

    Tensor<float> zs({d * steps, d});
    for (int dim = 0; dim < d; ++dim)
        for (int s = 0; s < steps; ++s)
            for (int j = 0; j < d; ++j) {
                const double v = (j == dim)
                                     ? -range + 2.0 * range * s / (steps - 1)
                                     : base[static_cast<std::size_t>(j)];
                zs.data[(static_cast<std::size_t>(dim) * steps + s) * d + j] = static_cast<float>(v);
            }
    Tape<float> tape;
    auto logits = model.decode(tape, tape.constant(zs));
    const Tensor<float>& lv = tape.val(logits);

    std::vector<float> grid(static_cast<std::size_t>(d * res) * static_cast<std::size_t>(steps * res));
    const std::size_t per_decode = static_cast<std::size_t>(lv.size() / (d * steps));
    for (int dim = 0; dim < d; ++dim)
        for (int s = 0; s < steps; ++s) {
            // first channel of each decoded cell
            const float* cell = lv.data.data() + (static_cast<std::size_t>(dim) * steps + s) * per_decode;
            for (int y = 0; y < res; ++y)
                for (int x = 0; x < res; ++x)
                    grid[(static_cast<std::size_t>(dim * res + y)) * (steps * res) + s * res + x] =
                        sigmoidf(cell[static_cast<std::size_t>(y) * res + x]);
        }
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    write_pgm(out_path, grid, d * res, steps * res);
    cfg.write_resolved(out_path + ".resolved.cfg");
    std::cout << "wrote " << out_path << " (" << d << "x" << steps << " grid)\n";
    return 0;
}

int cmd_report(KvConfig& cfg) {
    std::vector<std::string> run_dirs = cfg.get_list("runs", "");
    const std::string parent = cfg.get_string("parent", "");
    const double threshold = cfg.get_double("threshold", 0.1);
    const std::string out_path = cfg.require_string("out");
    if (!parent.empty()) {
        for (const auto& entry : fs::directory_iterator(parent))
            if (entry.is_directory() && fs::exists(entry.path() / "metrics.csv"))
                run_dirs.push_back(entry.path().string());
        std::sort(run_dirs.begin(), run_dirs.end());
    }
    if (run_dirs.empty()) throw std::runtime_error("report: no run directories given");

    struct Collected {
        std::vector<double> mig, nmi1, nmi2, recon;
    };
    std::map<std::string, Collected> groups;
    for (const std::string& dir : run_dirs) {
        std::ifstream in(dir + "/metrics.csv");
        if (!in) throw std::runtime_error("missing metrics.csv in " + dir + " (run `deft evaluate` first)");
        std::string line, last;
        std::getline(in, line);  // header
        const auto header = split_csv_line(line);
        while (std::getline(in, line))
            if (!line.empty()) last = line;
        if (last.empty()) throw std::runtime_error("empty metrics.csv in " + dir);
        const auto cells = split_csv_line(last);
        auto col = [&](const std::string& name) {
            for (std::size_t i = 0; i < header.size(); ++i)
                if (header[i] == name) return std::stod(cells.at(i));
            throw std::runtime_error("metrics.csv missing column " + name);
        };
        Collected& g = groups[approach_label(dir)];
        g.mig.push_back(col("mig"));
        g.nmi1.push_back(col("nmi1"));
        g.nmi2.push_back(col("nmi2"));
        g.recon.push_back(col("recon"));
    }

    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    std::ofstream out(out_path, std::ios::trunc);
    out << "approach,n_runs";
    for (const char* m : {"mig", "nmi1", "nmi2", "recon"})
        out << ',' << m << "_q1," << m << "_median," << m << "_q3";
    out << ",failure_rate\n";
    for (const auto& [label, g] : groups) {
        out << label << ',' << g.mig.size();
        for (const auto* v : {&g.mig, &g.nmi1, &g.nmi2, &g.recon})
            out << ',' << format_csv_double(quantile(*v, 0.25)) << ','
                << format_csv_double(quantile(*v, 0.5)) << ',' << format_csv_double(quantile(*v, 0.75));
        out << ',' << format_csv_double(failure_rate(g.mig, threshold)) << "\n";
    }
    cfg.write_resolved(out_path + ".resolved.cfg");
    std::cout << "wrote " << out_path << " (" << groups.size() << " approaches)\n";
    return 0;
}

}  // namespace cli
}  // namespace deft
