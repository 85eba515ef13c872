#include "deft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "deft/objectives.hpp"

namespace deft {

std::vector<int> DiscretizedLatents::column(int j) const {
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = codes[static_cast<std::size_t>(i) * d + j];
    return out;
}

DiscretizedLatents discretize_latents(const std::vector<double>& representations, int n, int d, int bins) {
    if (bins < 2) throw std::invalid_argument("discretize_latents: bins must be >= 2");
    if (n < bins) throw std::invalid_argument("discretize_latents: need at least `bins` samples");
    if (representations.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(d))
        throw std::invalid_argument("discretize_latents: representation size mismatch");

    DiscretizedLatents out;
    out.n = n;
    out.d = d;
    out.bins = bins;
    out.codes.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(d));
    out.constant_dim.assign(static_cast<std::size_t>(d), false);

    std::vector<double> col(static_cast<std::size_t>(n));
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = representations[static_cast<std::size_t>(i) * d + j];
        std::vector<double> sorted = col;
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> uniq = sorted;
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

        if (uniq.size() == 1) {
            out.constant_dim[static_cast<std::size_t>(j)] = true;
            for (int i = 0; i < n; ++i) out.codes[static_cast<std::size_t>(i) * d + j] = 0;
            continue;
        }
        if (static_cast<int>(uniq.size()) <= bins) {
            // few distinct values: one bin per value, exact
            for (int i = 0; i < n; ++i) {
                const auto it = std::lower_bound(uniq.begin(), uniq.end(), col[static_cast<std::size_t>(i)]);
                out.codes[static_cast<std::size_t>(i) * d + j] = static_cast<int>(it - uniq.begin());
            }
            continue;
        }
        // equal-population thresholds at ranks floor(k*N/bins)
        std::vector<double> thresholds(static_cast<std::size_t>(bins - 1));
        for (int k = 1; k < bins; ++k)
            thresholds[static_cast<std::size_t>(k - 1)] =
                sorted[static_cast<std::size_t>(static_cast<std::int64_t>(k) * n / bins)];
        for (int i = 0; i < n; ++i) {
            const double v = col[static_cast<std::size_t>(i)];
            const auto it = std::upper_bound(thresholds.begin(), thresholds.end(), v);
            out.codes[static_cast<std::size_t>(i) * d + j] = static_cast<int>(it - thresholds.begin());
        }
    }
    return out;
}

double entropy(const std::vector<int>& labels) {
    if (labels.empty()) throw std::invalid_argument("entropy: empty labels");
    std::map<int, std::int64_t> counts;
    for (int v : labels) ++counts[v];
    const double n = static_cast<double>(labels.size());
    double h = 0.0;
    for (const auto& [value, count] : counts)
        h += (static_cast<double>(count) / n) * std::log(n / static_cast<double>(count));
    return h;
}

double discrete_mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("discrete_mutual_information: length mismatch");
    if (a.empty()) throw std::invalid_argument("discrete_mutual_information: empty labels");
    std::map<std::pair<int, int>, std::int64_t> joint;
    std::map<int, std::int64_t> ca, cb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++joint[{a[i], b[i]}];
        ++ca[a[i]];
        ++cb[b[i]];
    }
    const double n = static_cast<double>(a.size());
    double mi = 0.0;
    for (const auto& [cell, count] : joint) {
        const double num = n * static_cast<double>(count);
        const double den = static_cast<double>(ca[cell.first]) * static_cast<double>(cb[cell.second]);
        mi += (static_cast<double>(count) / n) * std::log(num / den);
    }
    return mi;
}

std::vector<int> combine_labels(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("combine_labels: length mismatch");
    const int bmax = b.empty() ? 0 : *std::max_element(b.begin(), b.end());
    const int stride = bmax + 1;
    std::vector<int> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * stride + b[i];
    return out;
}

MiMatrix build_mi_matrix(const DiscretizedLatents& codes,
                         const std::vector<std::vector<int>>& factor_labels) {
    MiMatrix mi;
    mi.num_latents = codes.d;
    mi.num_factors = static_cast<int>(factor_labels.size());
    mi.values.resize(static_cast<std::size_t>(mi.num_latents) * static_cast<std::size_t>(mi.num_factors));
    mi.factor_entropies.resize(static_cast<std::size_t>(mi.num_factors));
    for (int k = 0; k < mi.num_factors; ++k)
        mi.factor_entropies[static_cast<std::size_t>(k)] = entropy(factor_labels[static_cast<std::size_t>(k)]);
    for (int j = 0; j < mi.num_latents; ++j) {
        const std::vector<int> zj = codes.column(j);
        for (int k = 0; k < mi.num_factors; ++k)
            mi.at(j, k) = discrete_mutual_information(zj, factor_labels[static_cast<std::size_t>(k)]);
    }
    return mi;
}

std::pair<double, int> nmi_rank(const MiMatrix& mi, int factor, int m) {
    if (factor < 0 || factor >= mi.num_factors) throw std::invalid_argument("nmi_rank: factor out of range");
    if (m < 1 || m > mi.num_latents) throw std::invalid_argument("nmi_rank: rank out of range");
    const double h = mi.factor_entropies[static_cast<std::size_t>(factor)];
    if (!(h > 0)) throw std::invalid_argument("nmi_rank: zero-entropy factor");
    std::vector<int> order(static_cast<std::size_t>(mi.num_latents));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int lhs, int rhs) {
        const double a = mi.at(lhs, factor), b = mi.at(rhs, factor);
        if (a != b) return a > b;
        return lhs < rhs;
    });
    const int j = order[static_cast<std::size_t>(m - 1)];
    return {mi.at(j, factor) / h, j};
}

double mig(const MiMatrix& mi) {
    if (mi.num_latents < 2) throw std::invalid_argument("mig: need at least two latents");
    double acc = 0.0;
    for (int k = 0; k < mi.num_factors; ++k)
        acc += nmi_rank(mi, k, 1).first - nmi_rank(mi, k, 2).first;
    return acc / mi.num_factors;
}

std::pair<double, double> nmi1_nmi2(const MiMatrix& mi) {
    if (mi.num_latents < 2) throw std::invalid_argument("nmi1_nmi2: need at least two latents");
    double n1 = 0.0, n2 = 0.0;
    for (int k = 0; k < mi.num_factors; ++k) {
        n1 += nmi_rank(mi, k, 1).first;
        n2 += nmi_rank(mi, k, 2).first;
    }
    return {n1, n2};
}

double failure_rate(const std::vector<double>& mig_scores, double threshold) {
    if (mig_scores.empty()) throw std::invalid_argument("failure_rate: empty score list");
    std::int64_t failures = 0;
    for (double s : mig_scores)
        if (s < threshold) ++failures;
    return static_cast<double>(failures) / static_cast<double>(mig_scores.size());
}

MetricReport report_from_matrix(const MiMatrix& mi) {
    MetricReport r;
    for (int k = 0; k < mi.num_factors; ++k) {
        const auto [v1, j1] = nmi_rank(mi, k, 1);
        const auto [v2, j2] = nmi_rank(mi, k, 2);
        (void)j2;
        r.nmi_top1.push_back(v1);
        r.nmi_top2.push_back(v2);
        r.argmax_latent.push_back(j1);
    }
    r.mig = mig(mi);
    const auto [n1, n2] = nmi1_nmi2(mi);
    r.nmi1 = n1;
    r.nmi2 = n2;
    return r;
}

EvalResult evaluate_representations(const std::vector<double>& representations, int n, int d,
                                    const std::vector<std::vector<int>>& factor_labels, int bins) {
    const DiscretizedLatents codes = discretize_latents(representations, n, d, bins);
    EvalResult out;
    out.matrix = build_mi_matrix(codes, factor_labels);
    out.report = report_from_matrix(out.matrix);
    return out;
}

std::vector<int> strided_subset(int n, int max_samples) {
    if (max_samples <= 0 || max_samples >= n) {
        std::vector<int> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    std::vector<int> rows(static_cast<std::size_t>(max_samples));
    for (int i = 0; i < max_samples; ++i)
        rows[static_cast<std::size_t>(i)] =
            static_cast<int>(static_cast<std::int64_t>(i) * n / max_samples);
    return rows;
}

std::vector<double> encode_means(VaeModel<float>& model, const LabeledDataset& dataset,
                                 const std::vector<int>& rows) {
    const int d = model.latent_dim();
    std::vector<double> reps(rows.size() * static_cast<std::size_t>(d));
    constexpr int kBatch = 256;
    for (std::size_t off = 0; off < rows.size(); off += kBatch) {
        const std::size_t take = std::min<std::size_t>(kBatch, rows.size() - off);
        std::vector<int> chunk(rows.begin() + static_cast<std::ptrdiff_t>(off),
                               rows.begin() + static_cast<std::ptrdiff_t>(off + take));
        Tape<float> tape;
        auto x = tape.constant(dataset.gather_images(chunk));
        auto post = model.encode(tape, x);
        const Tensor<float>& mu = tape.val(post.mean);
        for (std::size_t i = 0; i < take; ++i)
            for (int j = 0; j < d; ++j)
                reps[(off + i) * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] =
                    static_cast<double>(mu.data[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)]);
    }
    return reps;
}

EvalResult evaluate_model(VaeModel<float>& model, const LabeledDataset& dataset, int bins,
                          int max_samples) {
    dataset.validate();
    const std::vector<int> rows = strided_subset(dataset.n(), max_samples);
    const std::vector<double> reps = encode_means(model, dataset, rows);

    const int f = dataset.schema.num_factors();
    std::vector<std::vector<int>> labels(static_cast<std::size_t>(f));
    for (int k = 0; k < f; ++k) {
        labels[static_cast<std::size_t>(k)].reserve(rows.size());
        for (int row : rows) labels[static_cast<std::size_t>(k)].push_back(dataset.label(row, k));
    }
    return evaluate_representations(reps, static_cast<int>(rows.size()), model.latent_dim(), labels, bins);
}

double mean_reconstruction_error(VaeModel<float>& model, const LabeledDataset& dataset, int max_samples) {
    const std::vector<int> rows = strided_subset(dataset.n(), max_samples);
    double acc = 0.0;
    constexpr int kBatch = 256;
    for (std::size_t off = 0; off < rows.size(); off += kBatch) {
        const std::size_t take = std::min<std::size_t>(kBatch, rows.size() - off);
        std::vector<int> chunk(rows.begin() + static_cast<std::ptrdiff_t>(off),
                               rows.begin() + static_cast<std::ptrdiff_t>(off + take));
        Tensor<float> images = dataset.gather_images(chunk);
        Tape<float> tape;
        auto x = tape.constant(images);
        auto post = model.encode(tape, x);
        auto logits = model.decode(tape, post.mean);
        auto nll = tape.bernoulli_nll(logits, images);
        const Tensor<float>& v = tape.val(nll);
        double batch_sum = 0.0;
        for (float e : v.data) batch_sum += static_cast<double>(e);
        acc += batch_sum;
    }
    return acc / static_cast<double>(rows.size());
}

}  // namespace deft
