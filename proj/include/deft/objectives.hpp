#ifndef DEFT_OBJECTIVES_HPP
#define DEFT_OBJECTIVES_HPP

#include <optional>
#include <vector>

#include "deft/model.hpp"

namespace deft {

// Scalar loss plus detached diagnostics. total_id stays on the tape so the
// caller can run backward(); everything else is plain numbers. KL quantities
// are nats, reconstruction is the summed-over-pixels Bernoulli NLL, and all
// reported scalars are means over the batch.
template <typename T>
struct LossBreakdown {
    typename Tape<T>::Id total_id = -1;
    double total = 0;
    double recon = 0;
    double kl_total = 0;
    std::vector<double> kl_per_dim;
    std::optional<double> capacity;
    std::optional<double> mutual_info;
    std::optional<double> total_correlation;
    std::optional<double> dimwise_kl;
};

// Shared forward pass: encode, reparameterize, decode, per-sample losses.
template <typename T>
struct VaeForwardPass {
    typename Tape<T>::Id mean, logvar, z, logits;
    typename Tape<T>::Id kl_terms;    // [N, d]
    typename Tape<T>::Id recon_mean;  // scalar
    typename Tape<T>::Id kl_mean;     // scalar
};

template <typename T>
VaeForwardPass<T> vae_forward(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                              const Tensor<T>& noise);

template <typename T>
LossBreakdown<T> elbo_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                           const Tensor<T>& noise);

template <typename T>
LossBreakdown<T> beta_vae_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                               const Tensor<T>& noise, double beta);

template <typename T>
LossBreakdown<T> annealed_vae_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                                   const Tensor<T>& noise, double capacity, double gamma_cap = 1000.0);

// Linear capacity ramp from 0 at t=0 to c_max at t=t_max.
double capacity_schedule(double t, double t_max, double c_max);

// Minibatch-weighted-sampling estimates of the KL decomposition. Returns
// scalar tape ids for (MI, TC, DWKL), each a batch mean.
template <typename T>
struct KlDecomposition {
    typename Tape<T>::Id mutual_info, total_correlation, dimwise_kl;
};

template <typename T>
KlDecomposition<T> tcvae_decomposition(Tape<T>& tape, typename Tape<T>::Id z, typename Tape<T>::Id mean,
                                       typename Tape<T>::Id logvar, std::int64_t dataset_size);

template <typename T>
LossBreakdown<T> beta_tcvae_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                                 const Tensor<T>& noise, double beta, std::int64_t dataset_size);

// Split-pressure KL: dims 1..stage_i at beta_low, the rest at beta_high.
// stage_i is 1-based; stage_i == d puts the entire KL under beta_low.
template <typename T>
LossBreakdown<T> cascade_vaec_loss(Tape<T>& tape, VaeModel<T>& model, const Tensor<T>& images,
                                   const Tensor<T>& noise, int stage_i, double beta_low,
                                   double beta_high);

template <typename T>
Tensor<T> normal_tensor(Rng& rng, Shape shape);

}  // namespace deft

#endif
