#ifndef DEFT_ANNEALING_HPP
#define DEFT_ANNEALING_HPP

#include <optional>
#include <vector>

#include "deft/dataset.hpp"
#include "deft/model.hpp"

namespace deft {

struct AnnealProbe {
    long iteration = 0;
    double beta = 0;
    double mean_kl = 0;      // nats, batch-mean per-sample KL (the I(x;z) proxy)
    double recon_error = 0;  // mean per-sample Bernoulli NLL of decoded posterior means
};

struct AnnealCurve {
    std::vector<AnnealProbe> samples;
    double beta_start = 200, beta_end = 1;
    long total_iters = 0;
};

struct AnnealParams {
    double beta_start = 200;
    double beta_end = 1;
    int iters = 5000;
    int probe_interval = 50;
    int latent_dim = 4;
    double learning_rate = 5e-4;
    int batch_size = 64;
    std::uint64_t seed = 1;

    void validate() const;
};

// Trains a fresh lite-encoder VAE on the slice while beta decays linearly
// from beta_start to beta_end, probing mean KL and reconstruction error
// every probe_interval steps.
AnnealCurve annealing_test(const LabeledDataset& slice, const AnnealParams& params);

struct IfpSample {
    int factor_index = -1;  // -1 for unsupervised runs
    std::optional<double> ifp_beta;
};

// Largest beta whose probe shows mean KL above the threshold; absent when
// the curve never crosses.
IfpSample detect_ifp(const AnnealCurve& curve, double threshold = 0.1);

// Repeats the annealing test on freshly drawn fixed-factor slices. Per-repeat
// seeds derive from params.seed, so repeats are independent but reproducible.
std::vector<IfpSample> ifp_distribution(const LabeledDataset& dataset, int factor_index, int repeats,
                                        const AnnealParams& params);

// First differences of mean KL between consecutive probes, keyed by the
// later probe's beta. Emitted for human inspection of freezing knees.
std::vector<std::pair<double, double>> increment_curve(const AnnealCurve& curve);

}  // namespace deft

#endif
