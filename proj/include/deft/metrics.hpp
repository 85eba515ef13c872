#ifndef DEFT_METRICS_HPP
#define DEFT_METRICS_HPP

#include <utility>
#include <vector>

#include "deft/dataset.hpp"
#include "deft/model.hpp"

namespace deft {

// Per-dimension quantile discretization. Dimensions with at most `bins`
// distinct values keep one bin per value; constant dimensions collapse to a
// single bin and are flagged rather than rejected.
struct DiscretizedLatents {
    std::vector<int> codes;  // row-major [N, d]
    std::vector<bool> constant_dim;
    int n = 0, d = 0, bins = 0;

    std::vector<int> column(int j) const;
};

DiscretizedLatents discretize_latents(const std::vector<double>& representations, int n, int d, int bins);

// Plug-in Shannon entropy of the empirical distribution, in nats.
double entropy(const std::vector<int>& labels);

// Plug-in mutual information from joint counts, in nats. Terms are summed in
// sorted cell order, so MI(a,a) reproduces entropy(a) bit for bit.
double discrete_mutual_information(const std::vector<int>& a, const std::vector<int>& b);

// Pairs (a,b) encoded as one label, for MI against a joint factor.
std::vector<int> combine_labels(const std::vector<int>& a, const std::vector<int>& b);

struct MiMatrix {
    int num_latents = 0, num_factors = 0;
    std::vector<double> values;  // [num_latents, num_factors]
    std::vector<double> factor_entropies;

    double at(int latent, int factor) const {
        return values[static_cast<std::size_t>(latent) * num_factors + static_cast<std::size_t>(factor)];
    }
    double& at(int latent, int factor) {
        return values[static_cast<std::size_t>(latent) * num_factors + static_cast<std::size_t>(factor)];
    }
};

MiMatrix build_mi_matrix(const DiscretizedLatents& codes,
                         const std::vector<std::vector<int>>& factor_labels);

// m-th largest normalized MI for one factor; ties broken by lowest latent
// index. Throws on zero-entropy factors.
std::pair<double, int> nmi_rank(const MiMatrix& mi, int factor, int m);

double mig(const MiMatrix& mi);
std::pair<double, double> nmi1_nmi2(const MiMatrix& mi);

double failure_rate(const std::vector<double>& mig_scores, double threshold = 0.1);

struct MetricReport {
    double mig = 0, nmi1 = 0, nmi2 = 0;
    std::vector<double> nmi_top1, nmi_top2;  // per factor
    std::vector<int> argmax_latent;          // per factor
};

MetricReport report_from_matrix(const MiMatrix& mi);

struct EvalResult {
    MetricReport report;
    MiMatrix matrix;
};

EvalResult evaluate_representations(const std::vector<double>& representations, int n, int d,
                                    const std::vector<std::vector<int>>& factor_labels, int bins = 20);

// Encodes the dataset with posterior means (no sampling noise) and scores the
// representation against the dataset's factor labels. max_samples == 0 uses
// every image; otherwise an evenly strided subset.
EvalResult evaluate_model(VaeModel<float>& model, const LabeledDataset& dataset, int bins = 20,
                          int max_samples = 0);

// Posterior means for a row subset, row-major [rows.size(), latent_dim].
std::vector<double> encode_means(VaeModel<float>& model, const LabeledDataset& dataset,
                                 const std::vector<int>& rows);

// Deterministic reconstruction error: decode posterior means, mean per-sample
// Bernoulli NLL over the given subset (all rows when max_samples == 0).
double mean_reconstruction_error(VaeModel<float>& model, const LabeledDataset& dataset,
                                 int max_samples = 0);

std::vector<int> strided_subset(int n, int max_samples);

}  // namespace deft

#endif
