#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "deft/annealing.hpp"
#include "deft/metrics.hpp"
#include "deft/trainer.hpp"

namespace py = pybind11;
using namespace deft;

namespace {

py::array_t<float> images_array(const LabeledDataset& ds) {
    const auto& img = ds.images;
    py::array_t<float> out({img.extent(0), img.extent(1), img.extent(2), img.extent(3)});
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

py::array_t<std::uint16_t> labels_array(const LabeledDataset& ds) {
    py::array_t<std::uint16_t> out({ds.n(), ds.schema.num_factors()});
    std::copy(ds.labels.begin(), ds.labels.end(), out.mutable_data());
    return out;
}

std::vector<int> to_labels(const py::array_t<long, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> out(static_cast<std::size_t>(a.size()));
    const long* p = a.data();
    for (py::ssize_t i = 0; i < a.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(p[i]);
    return out;
}

py::dict report_dict(const EvalResult& eval) {
    py::dict d;
    d["mig"] = eval.report.mig;
    d["nmi1"] = eval.report.nmi1;
    d["nmi2"] = eval.report.nmi2;
    d["nmi_top1"] = eval.report.nmi_top1;
    d["nmi_top2"] = eval.report.nmi_top2;
    d["argmax_latent"] = eval.report.argmax_latent;
    py::array_t<double> mi({eval.matrix.num_latents, eval.matrix.num_factors});
    std::copy(eval.matrix.values.begin(), eval.matrix.values.end(), mi.mutable_data());
    d["mi_matrix"] = mi;
    d["factor_entropies"] = eval.matrix.factor_entropies;
    return d;
}

py::dict trace_dict(const RunResult& result) {
    py::dict d;
    const std::size_t n = result.trace.rows.size();
    py::array_t<long> iters(static_cast<py::ssize_t>(n));
    py::array_t<int> stage(static_cast<py::ssize_t>(n));
    py::array_t<double> total(static_cast<py::ssize_t>(n)), recon(static_cast<py::ssize_t>(n)),
        kl(static_cast<py::ssize_t>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const TraceRow& r = result.trace.rows[i];
        iters.mutable_data()[i] = r.iteration;
        stage.mutable_data()[i] = r.stage;
        total.mutable_data()[i] = r.total;
        recon.mutable_data()[i] = r.recon;
        kl.mutable_data()[i] = r.kl_total;
    }
    d["iteration"] = iters;
    d["stage"] = stage;
    d["total"] = total;
    d["recon"] = recon;
    d["kl_total"] = kl;
    d["checkpoints"] = result.checkpoints;
    return d;
}

LabeledDataset dataset_from_parts(py::array_t<float, py::array::c_style | py::array::forcecast> images,
                                  py::array_t<long, py::array::c_style | py::array::forcecast> labels,
                                  const std::vector<std::pair<std::string, int>>& factors) {
    if (images.ndim() != 4) throw std::invalid_argument("images must be [N,C,H,W]");
    if (labels.ndim() != 2) throw std::invalid_argument("labels must be [N,F]");
    LabeledDataset ds;
    ds.images = Tensor<float>({static_cast<int>(images.shape(0)), static_cast<int>(images.shape(1)),
                               static_cast<int>(images.shape(2)), static_cast<int>(images.shape(3))});
    std::copy(images.data(), images.data() + images.size(), ds.images.data.begin());
    ds.labels.resize(static_cast<std::size_t>(labels.size()));
    for (py::ssize_t i = 0; i < labels.size(); ++i)
        ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(labels.data()[i]);
    for (const auto& [name, card] : factors) ds.schema.factors.push_back({name, card, {}});
    ds.validate();
    return ds;
}

}  // namespace

PYBIND11_MODULE(_deft, m) {
    m.doc() = "disentanglement lab: datasets, objectives, multi-stage training, metrics";

    py::class_<LabeledDataset>(m, "Dataset")
        .def_static("from_arrays", &dataset_from_parts, py::arg("images"), py::arg("labels"),
                    py::arg("factors"))
        .def_property_readonly("images", &images_array)
        .def_property_readonly("labels", &labels_array)
        .def_property_readonly("resolution", &LabeledDataset::resolution)
        .def_property_readonly("factor_names",
                               [](const LabeledDataset& ds) {
                                   std::vector<std::string> names;
                                   for (const auto& f : ds.schema.factors) names.push_back(f.name);
                                   return names;
                               })
        .def_property_readonly("cardinalities",
                               [](const LabeledDataset& ds) {
                                   std::vector<int> cards;
                                   for (const auto& f : ds.schema.factors) cards.push_back(f.cardinality);
                                   return cards;
                               })
        .def("__len__", &LabeledDataset::n)
        .def(
            "save", [](const LabeledDataset& ds, const std::string& path) { save_dataset(ds, path); },
            py::arg("path"));

    m.def(
        "generate_grid",
        [](const std::vector<std::pair<std::string, int>>& factors, int resolution) {
            FactorSchema schema;
            for (const auto& [name, card] : factors) schema.factors.push_back({name, card, {}});
            return generate_grid_dataset(schema, resolution);
        },
        py::arg("factors"), py::arg("resolution") = 16,
        "Cartesian-product dataset over factors given as (name, cardinality) pairs");
    m.def("generate_triangle", &generate_triangle_correlated, py::arg("resolution") = 16,
          py::arg("grid") = 8, py::arg("orientation_bins") = 8);
    m.def("load_dataset", &load_dataset, py::arg("path"));
    m.def(
        "render_shape",
        [](int shape_id, int scale_idx, int scale_card, int orient_idx, int orient_card, int posx_idx,
           int posx_card, int posy_idx, int posy_card, int resolution) {
            auto img = render_shape(shape_id, scale_idx, scale_card, orient_idx, orient_card, posx_idx,
                                    posx_card, posy_idx, posy_card, resolution);
            py::array_t<float> out({img.extent(1), img.extent(2)});
            std::copy(img.data.begin(), img.data.end(), out.mutable_data());
            return out;
        },
        py::arg("shape_id"), py::arg("scale_idx"), py::arg("scale_card"), py::arg("orient_idx"),
        py::arg("orient_card"), py::arg("posx_idx"), py::arg("posx_card"), py::arg("posy_idx"),
        py::arg("posy_card"), py::arg("resolution") = 16);

    m.def(
        "entropy",
        [](py::array_t<long, py::array::c_style | py::array::forcecast> labels) {
            return entropy(to_labels(labels));
        },
        py::arg("labels"), "Plug-in Shannon entropy in nats");
    m.def(
        "mutual_information",
        [](py::array_t<long, py::array::c_style | py::array::forcecast> a,
           py::array_t<long, py::array::c_style | py::array::forcecast> b) {
            return discrete_mutual_information(to_labels(a), to_labels(b));
        },
        py::arg("a"), py::arg("b"), "Plug-in discrete mutual information in nats");
    m.def(
        "evaluate_representations",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> reps,
           py::array_t<long, py::array::c_style | py::array::forcecast> labels, int bins) {
            if (reps.ndim() != 2 || labels.ndim() != 2)
                throw std::invalid_argument("representations and labels must be 2-D");
            const int n = static_cast<int>(reps.shape(0));
            const int d = static_cast<int>(reps.shape(1));
            const int f = static_cast<int>(labels.shape(1));
            std::vector<double> r(reps.data(), reps.data() + reps.size());
            std::vector<std::vector<int>> cols(static_cast<std::size_t>(f));
            for (int k = 0; k < f; ++k) {
                cols[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(n));
                for (int i = 0; i < n; ++i)
                    cols[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] =
                        static_cast<int>(labels.data()[static_cast<std::size_t>(i) * f + k]);
            }
            return report_dict(evaluate_representations(r, n, d, cols, bins));
        },
        py::arg("representations"), py::arg("labels"), py::arg("bins") = 20,
        "MIG / NMI1 / NMI2 and the MI matrix for an [N,d] representation");
    m.def("failure_rate", &failure_rate, py::arg("mig_scores"), py::arg("threshold") = 0.1);

    m.def(
        "run_deft",
        [](const LabeledDataset& ds, int groups, int latents_per_group, const std::vector<double>& betas,
           double gamma, int steps_per_stage, int epochs_per_stage, double learning_rate, int batch_size,
           std::uint64_t seed, const std::string& out_dir, int trace_every, bool evaluate_stages,
           int bins) {
            StageSchedule s;
            s.groups = groups;
            s.latents_per_group = latents_per_group;
            s.betas = betas;
            s.gamma = gamma;
            s.steps_per_stage = steps_per_stage;
            s.epochs_per_stage = epochs_per_stage;
            s.learning_rate = learning_rate;
            s.batch_size = batch_size;
            s.seed = seed;
            RunOptions opt;
            opt.out_dir = out_dir;
            opt.trace_every = trace_every;
            std::vector<std::pair<int, EvalResult>> stage_evals;
            if (evaluate_stages)
                opt.on_stage_end = [&](int stage, VaeModel<float>& model) {
                    stage_evals.emplace_back(stage, evaluate_model(model, ds, bins, 0));
                };
            RunResult result = [&] {
                py::gil_scoped_release release;
                return run_deft(s, ds, opt);
            }();
            py::dict out = trace_dict(result);
            if (evaluate_stages) {
                std::vector<py::dict> stage_metrics;
                for (auto& [stage, eval] : stage_evals) {
                    py::dict row = report_dict(eval);
                    row["stage"] = stage;
                    stage_metrics.push_back(std::move(row));
                }
                out["stage_metrics"] = stage_metrics;
            }
            return out;
        },
        py::arg("dataset"), py::arg("groups"), py::arg("latents_per_group"), py::arg("betas"),
        py::arg("gamma") = 0.1, py::arg("steps_per_stage") = 0, py::arg("epochs_per_stage") = 0,
        py::arg("learning_rate") = 5e-4, py::arg("batch_size") = 64, py::arg("seed") = 1,
        py::arg("out_dir") = "", py::arg("trace_every") = 50, py::arg("evaluate_stages") = false,
        py::arg("bins") = 20, "Multi-stage training; returns the trace and optional per-stage metrics");

    m.def(
        "run_baseline",
        [](const LabeledDataset& ds, const std::string& objective, double beta, double beta_low,
           double beta_high, double c_max, int latent_dim, int steps, int epochs, double learning_rate,
           int batch_size, std::uint64_t seed, const std::string& out_dir, int trace_every) {
            BaselineConfig c;
            c.objective = objective;
            c.beta = beta;
            c.beta_low = beta_low;
            c.beta_high = beta_high;
            c.c_max = c_max;
            c.latent_dim = latent_dim;
            c.steps = steps;
            c.epochs = epochs;
            c.learning_rate = learning_rate;
            c.batch_size = batch_size;
            c.seed = seed;
            RunOptions opt;
            opt.out_dir = out_dir;
            opt.trace_every = trace_every;
            RunResult result = [&] {
                py::gil_scoped_release release;
                return run_baseline(c, ds, opt);
            }();
            return trace_dict(result);
        },
        py::arg("dataset"), py::arg("objective"), py::arg("beta") = 4.0, py::arg("beta_low") = 1.0,
        py::arg("beta_high") = 10.0, py::arg("c_max") = 25.0, py::arg("latent_dim") = 10,
        py::arg("steps") = 0, py::arg("epochs") = 0, py::arg("learning_rate") = 5e-4,
        py::arg("batch_size") = 64, py::arg("seed") = 1, py::arg("out_dir") = "",
        py::arg("trace_every") = 50);

    m.def(
        "annealing_test",
        [](const LabeledDataset& ds, double beta_start, double beta_end, int iters, int probe_interval,
           int latent_dim, double learning_rate, int batch_size, std::uint64_t seed) {
            AnnealParams p;
            p.beta_start = beta_start;
            p.beta_end = beta_end;
            p.iters = iters;
            p.probe_interval = probe_interval;
            p.latent_dim = latent_dim;
            p.learning_rate = learning_rate;
            p.batch_size = batch_size;
            p.seed = seed;
            AnnealCurve curve = [&] {
                py::gil_scoped_release release;
                return annealing_test(ds, p);
            }();
            const std::size_t n = curve.samples.size();
            py::array_t<long> iter(static_cast<py::ssize_t>(n));
            py::array_t<double> beta(static_cast<py::ssize_t>(n)), kl(static_cast<py::ssize_t>(n)),
                recon(static_cast<py::ssize_t>(n));
            for (std::size_t i = 0; i < n; ++i) {
                iter.mutable_data()[i] = curve.samples[i].iteration;
                beta.mutable_data()[i] = curve.samples[i].beta;
                kl.mutable_data()[i] = curve.samples[i].mean_kl;
                recon.mutable_data()[i] = curve.samples[i].recon_error;
            }
            py::dict d;
            d["iteration"] = iter;
            d["beta"] = beta;
            d["mean_kl"] = kl;
            d["recon"] = recon;
            return d;
        },
        py::arg("dataset"), py::arg("beta_start") = 200.0, py::arg("beta_end") = 1.0,
        py::arg("iters") = 5000, py::arg("probe_interval") = 50, py::arg("latent_dim") = 4,
        py::arg("learning_rate") = 5e-4, py::arg("batch_size") = 64, py::arg("seed") = 1);

    m.def(
        "detect_ifp",
        [](const std::vector<double>& betas, const std::vector<double>& mean_kls,
           double threshold) -> std::optional<double> {
            AnnealCurve curve;
            if (betas.size() != mean_kls.size()) throw std::invalid_argument("length mismatch");
            for (std::size_t i = 0; i < betas.size(); ++i)
                curve.samples.push_back({static_cast<long>(i + 1), betas[i], mean_kls[i], 0.0});
            auto s = detect_ifp(curve, threshold);
            if (s.ifp_beta) return *s.ifp_beta;
            return std::nullopt;
        },
        py::arg("betas"), py::arg("mean_kls"), py::arg("threshold") = 0.1,
        "Largest beta whose probe exceeds the threshold, or None");
}
