#include "deft/annealing.hpp"

#include <cmath>
#include <stdexcept>

#include "deft/objectives.hpp"

namespace deft {

namespace {

// Deterministic probe: KL of the posterior over the whole slice plus the
// reconstruction error of decoded posterior means.
std::pair<double, double> probe_slice(VaeModel<float>& model, const Tensor<float>& images) {
    Tape<float> tape;
    auto x = tape.constant(images);
    auto post = model.encode(tape, x);
    auto kl = tape.mean_all(tape.row_sum(tape.kl_unit_gaussian_terms(post.mean, post.logvar)));
    const double mean_kl = static_cast<double>(tape.val(kl).item());

    auto logits = model.decode(tape, post.mean);
    auto nll = tape.bernoulli_nll(logits, images);
    const Tensor<float>& v = tape.val(nll);
    double acc = 0.0;
    for (float e : v.data) acc += static_cast<double>(e);
    const double recon = acc / images.extent(0);
    if (!std::isfinite(mean_kl) || !std::isfinite(recon))
        throw std::runtime_error("annealing probe hit a non-finite training state");
    return {mean_kl, recon};
}

}  // namespace

void AnnealParams::validate() const {
    if (!(beta_end < beta_start)) throw std::invalid_argument("annealing: beta_end must be < beta_start");
    if (beta_end < 0) throw std::invalid_argument("annealing: beta_end must be >= 0");
    if (probe_interval < 1 || iters < 2 * probe_interval)
        throw std::invalid_argument("annealing: need iters >= 2 * probe_interval");
    if (latent_dim < 1 || learning_rate <= 0 || batch_size < 1)
        throw std::invalid_argument("annealing: bad model settings");
}

AnnealCurve annealing_test(const LabeledDataset& slice, const AnnealParams& params) {
    params.validate();
    if (slice.n() < 1) throw std::invalid_argument("annealing_test: empty slice");

    Rng init_rng(derive_seed(params.seed, 0));
    Rng train_rng(derive_seed(params.seed, 1));
    VaeModel<float> model = build_deft_model<float>(1, params.latent_dim, slice.resolution(),
                                                    slice.channels(), init_rng);
    const int d = model.latent_dim();

    AnnealCurve curve;
    curve.beta_start = params.beta_start;
    curve.beta_end = params.beta_end;
    curve.total_iters = params.iters;

    std::vector<int> all_rows(static_cast<std::size_t>(slice.n()));
    for (int i = 0; i < slice.n(); ++i) all_rows[static_cast<std::size_t>(i)] = i;
    const Tensor<float> all_images = slice.gather_images(all_rows);
    std::vector<int> order = all_rows;
    std::size_t cursor = order.size();

    for (int t = 1; t <= params.iters; ++t) {
        const double beta =
            params.beta_start + (params.beta_end - params.beta_start) * static_cast<double>(t) / params.iters;
        std::vector<int> idx;
        idx.reserve(static_cast<std::size_t>(params.batch_size));
        while (static_cast<int>(idx.size()) < params.batch_size &&
               static_cast<int>(idx.size()) < slice.n()) {
            if (cursor >= order.size()) {
                train_rng.shuffle(order);
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        Tensor<float> images = slice.gather_images(idx);
        Tensor<float> noise = normal_tensor<float>(train_rng, {static_cast<int>(idx.size()), d});
        Tape<float> tape;
        auto lb = beta_vae_loss(tape, model, images, noise, beta);
        tape.backward(lb.total_id);
        auto params_all = model.parameters();
        adam_step(params_all, static_cast<float>(params.learning_rate));

        if (t % params.probe_interval == 0) {
            const auto [mean_kl, recon] = probe_slice(model, all_images);
            curve.samples.push_back({t, beta, mean_kl, recon});
        }
    }
    return curve;
}

IfpSample detect_ifp(const AnnealCurve& curve, double threshold) {
    if (curve.samples.empty()) throw std::invalid_argument("detect_ifp: empty curve");
    IfpSample out;
    double best = -1.0;
    for (const AnnealProbe& p : curve.samples) {
        if (p.mean_kl > threshold && p.beta > best) {
            best = p.beta;
            out.ifp_beta = p.beta;
        }
    }
    return out;
}

std::vector<IfpSample> ifp_distribution(const LabeledDataset& dataset, int factor_index, int repeats,
                                        const AnnealParams& params) {
    if (factor_index < 0 || factor_index >= dataset.schema.num_factors())
        throw std::invalid_argument("ifp_distribution: factor index out of range");
    if (dataset.schema.factors[static_cast<std::size_t>(factor_index)].cardinality < 2)
        throw std::invalid_argument("ifp_distribution: factor cardinality must be >= 2");
    if (repeats < 1) throw std::invalid_argument("ifp_distribution: repeats must be >= 1");

    std::vector<IfpSample> out;
    out.reserve(static_cast<std::size_t>(repeats));
    for (int r = 0; r < repeats; ++r) {
        Rng slice_rng(derive_seed(params.seed, 100 + static_cast<std::uint64_t>(r)));
        LabeledDataset slice = fixed_factor_batch(dataset, factor_index, slice_rng);
        AnnealParams run = params;
        run.seed = derive_seed(params.seed, 1000 + static_cast<std::uint64_t>(r));
        AnnealCurve curve = annealing_test(slice, run);
        IfpSample sample = detect_ifp(curve);
        sample.factor_index = factor_index;
        out.push_back(sample);
    }
    return out;
}

std::vector<std::pair<double, double>> increment_curve(const AnnealCurve& curve) {
    if (curve.samples.size() < 2) throw std::invalid_argument("increment_curve: need at least two probes");
    std::vector<std::pair<double, double>> out;
    out.reserve(curve.samples.size() - 1);
    for (std::size_t i = 1; i < curve.samples.size(); ++i)
        out.emplace_back(curve.samples[i].beta, curve.samples[i].mean_kl - curve.samples[i - 1].mean_kl);
    return out;
}

}  // namespace deft
