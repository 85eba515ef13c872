#include "deft/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace deft {

namespace {

template <typename T>
std::vector<double> column_means(const Tensor<T>& m) {
    const int n = m.extent(0), d = m.extent(1);
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            out[static_cast<std::size_t>(j)] += static_cast<double>(m.data[static_cast<std::size_t>(i) * d + j]);
    for (auto& v : out) v /= n;
    return out;
}

template <typename T>
void finalize(Tape<T>& tape, LossBreakdown<T>& lb, const VaeForwardPass<T>& fwd) {
    lb.total = static_cast<double>(tape.val(lb.total_id).item());
    lb.recon = static_cast<double>(tape.val(fwd.recon_mean).item());
    lb.kl_total = static_cast<double>(tape.val(fwd.kl_mean).item());
    lb.kl_per_dim = column_means(tape.val(fwd.kl_terms));
    if (!std::isfinite(lb.total) || !std::isfinite(lb.recon) || !std::isfinite(lb.kl_total))
        throw std::runtime_error("objective produced a non-finite loss");
}

}  // namespace

template <typename T>
Tensor<T> normal_tensor(Rng& rng, Shape shape) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal());
    return t;
}

template <typename T>
VaeForwardPass<T> vae_forward(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                              const Tensor<T>& noise) {
    if (images.rank() != 4 || images.extent(0) < 1)
        throw std::invalid_argument("vae_forward: batch must be [N,C,H,W] with N >= 1");
    using Id = typename Tape<T>::Id;
    const int n = images.extent(0);
    const int pixels = static_cast<int>(images.size() / n);

    VaeForwardPass<T> f;
    Id x = tape.constant(images);
    auto post = model.encode(tape, x);
    f.mean = post.mean;
    f.logvar = post.logvar;
    f.z = tape.reparameterize(f.mean, f.logvar, noise);
    f.logits = model.decode(tape, f.z);

    Id nll = tape.bernoulli_nll(f.logits, images);
    Id per_sample = tape.row_sum(tape.reshape(nll, {n, pixels}));
    f.recon_mean = tape.mean_all(per_sample);

    f.kl_terms = tape.kl_unit_gaussian_terms(f.mean, f.logvar);
    f.kl_mean = tape.mean_all(tape.row_sum(f.kl_terms));
    return f;
}

template <typename T>
LossBreakdown<T> beta_vae_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                               const Tensor<T>& noise, double beta) {
    if (beta < 0) throw std::invalid_argument("beta_vae_loss: beta must be >= 0");
    auto f = vae_forward(tape, model, images, noise);
    LossBreakdown<T> lb;
    lb.total_id = tape.add(f.recon_mean, tape.mul_scalar(f.kl_mean, static_cast<T>(beta)));
    finalize(tape, lb, f);
    return lb;
}

template <typename T>
LossBreakdown<T> elbo_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                           const Tensor<T>& noise) {
    return beta_vae_loss(tape, model, images, noise, 1.0);
}

template <typename T>
LossBreakdown<T> annealed_vae_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                                   const Tensor<T>& noise, double capacity, double gamma_cap) {
    if (capacity < 0) throw std::invalid_argument("annealed_vae_loss: capacity must be >= 0");
    auto f = vae_forward(tape, model, images, noise);
    LossBreakdown<T> lb;
    auto gap = tape.abs(tape.add_scalar(f.kl_mean, static_cast<T>(-capacity)));
    lb.total_id = tape.add(f.recon_mean, tape.mul_scalar(gap, static_cast<T>(gamma_cap)));
    finalize(tape, lb, f);
    lb.capacity = capacity;
    return lb;
}

double capacity_schedule(double t, double t_max, double c_max) {
    if (t < 0 || t > t_max || t_max <= 0) throw std::invalid_argument("capacity_schedule: need 0 <= t <= t_max");
    return c_max * t / t_max;
}

template <typename T>
KlDecomposition<T> tcvae_decomposition(Tape<T>& tape, typename Tape<T>::Id z, typename Tape<T>::Id mean,
                                       typename Tape<T>::Id logvar, std::int64_t dataset_size) {
    using Id = typename Tape<T>::Id;
    const int m = tape.val(z).extent(0);
    const int d = tape.val(z).extent(1);
    if (m < 2) throw std::invalid_argument("tcvae_decomposition: batch size must be >= 2");
    if (dataset_size < m) throw std::invalid_argument("tcvae_decomposition: dataset smaller than batch");
    const T log_mn = static_cast<T>(std::log(static_cast<double>(m) * static_cast<double>(dataset_size)));

    Id logq_condx = tape.row_sum(tape.gaussian_log_density_diag(z, mean, logvar));  // [M]
    Id pairs = tape.gaussian_log_density_pairs(z, mean, logvar);                    // [M,M,d]
    Id logqz = tape.add_scalar(tape.logsumexp_last(tape.sum_axis2(pairs)), -log_mn);
    Id logqz_prod = tape.add_scalar(tape.row_sum(tape.logsumexp_axis1(pairs)),
                                    -static_cast<T>(d) * log_mn);
    Id logpz = tape.row_sum(tape.std_normal_log_density(z));

    KlDecomposition<T> out;
    out.mutual_info = tape.mean_all(tape.sub(logq_condx, logqz));
    out.total_correlation = tape.mean_all(tape.sub(logqz, logqz_prod));
    out.dimwise_kl = tape.mean_all(tape.sub(logqz_prod, logpz));
    return out;
}

template <typename T>
LossBreakdown<T> beta_tcvae_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                                 const Tensor<T>& noise, double beta, std::int64_t dataset_size) {
    if (images.extent(0) < 2) throw std::invalid_argument("beta_tcvae_loss: batch size must be >= 2");
    auto f = vae_forward(tape, model, images, noise);
    auto dec = tcvae_decomposition(tape, f.z, f.mean, f.logvar, dataset_size);
    LossBreakdown<T> lb;
    auto penalty = tape.add(tape.add(dec.mutual_info, tape.mul_scalar(dec.total_correlation, static_cast<T>(beta))),
                            dec.dimwise_kl);
    lb.total_id = tape.add(f.recon_mean, penalty);
    finalize(tape, lb, f);
    lb.mutual_info = static_cast<double>(tape.val(dec.mutual_info).item());
    lb.total_correlation = static_cast<double>(tape.val(dec.total_correlation).item());
    lb.dimwise_kl = static_cast<double>(tape.val(dec.dimwise_kl).item());
    return lb;
}

template <typename T>
LossBreakdown<T> cascade_vaec_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                                   const Tensor<T>& noise, int stage_i, double beta_low,
                                   double beta_high) {
    const int d = model.latent_dim();
    if (stage_i < 1 || stage_i > d) throw std::invalid_argument("cascade_vaec_loss: stage out of range");
    if (beta_low == beta_high)  // collapses to the single-pressure objective
        return beta_vae_loss(tape, model, images, noise, beta_low);
    auto f = vae_forward(tape, model, images, noise);
    LossBreakdown<T> lb;
    auto low = tape.mean_all(tape.row_sum(tape.col_slice(f.kl_terms, 0, stage_i)));
    auto penalty = tape.mul_scalar(low, static_cast<T>(beta_low));
    if (stage_i < d) {
        auto high = tape.mean_all(tape.row_sum(tape.col_slice(f.kl_terms, stage_i, d)));
        penalty = tape.add(penalty, tape.mul_scalar(high, static_cast<T>(beta_high)));
    }
    lb.total_id = tape.add(f.recon_mean, penalty);
    finalize(tape, lb, f);
    return lb;
}

#define DEFT_INSTANTIATE(T)                                                                            \
    template Tensor<T> normal_tensor<T>(Rng&, Shape);                                                  \
    template VaeForwardPass<T> vae_forward<T>(Tape<T>&, VaeModel<T>&, const Tensor<T>&,                \
                                              const Tensor<T>&);                                       \
    template LossBreakdown<T> elbo_loss<T>(Tape<T>&, VaeModel<T>&, const Tensor<T>&, const Tensor<T>&);\
    template LossBreakdown<T> beta_vae_loss<T>(Tape<T>&, VaeModel<T>&, const Tensor<T>&,               \
                                               const Tensor<T>&, double);                              \
    template LossBreakdown<T> annealed_vae_loss<T>(Tape<T>&, VaeModel<T>&, const Tensor<T>&,           \
                                                   const Tensor<T>&, double, double);                  \
    template KlDecomposition<T> tcvae_decomposition<T>(Tape<T>&, typename Tape<T>::Id,                 \
                                                       typename Tape<T>::Id, typename Tape<T>::Id,    \
                                                       std::int64_t);                                  \
    template LossBreakdown<T> beta_tcvae_loss<T>(Tape<T>&, VaeModel<T>&, const Tensor<T>&,             \
                                                 const Tensor<T>&, double, std::int64_t);              \
    template LossBreakdown<T> cascade_vaec_loss<T>(Tape<T>&, VaeModel<T>&, const Tensor<T>&,           \
                                                   const Tensor<T>&, int, double, double);

DEFT_INSTANTIATE(float)
DEFT_INSTANTIATE(double)
#undef DEFT_INSTANTIATE

}  // namespace deft
