#include "deft/model.hpp"

#include <stdexcept>

namespace deft {

template <typename T>
typename VaeModel<T>::Posterior VaeModel<T>::encode(Tape<T>& tape, typename Tape<T>::Id x) {
    using Id = typename Tape<T>::Id;
    std::vector<Id> means, logvars;
    means.reserve(encoders.size());
    logvars.reserve(encoders.size());
    for (auto& enc : encoders) {
        Id out = enc.forward(tape, x);  // [N, 2K]
        means.push_back(tape.col_slice(out, 0, latents_per_group));
        logvars.push_back(tape.col_slice(out, latents_per_group, 2 * latents_per_group));
    }
    if (means.size() == 1) return {means[0], logvars[0]};
    return {tape.col_concat(means), tape.col_concat(logvars)};
}

template <typename T>
typename Tape<T>::Id VaeModel<T>::decode(Tape<T>& tape, typename Tape<T>::Id z) {
    return decoder.forward(tape, z);
}

template <typename T>
std::vector<Parameter<T>*> VaeModel<T>::encoder_parameters(int group) {
    if (group < 0 || group >= groups) throw std::invalid_argument("encoder group out of range");
    return encoders[static_cast<std::size_t>(group)].parameters();
}

template <typename T>
std::vector<Parameter<T>*> VaeModel<T>::parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& enc : encoders)
        for (auto* p : enc.parameters()) out.push_back(p);
    for (auto* p : decoder.parameters()) out.push_back(p);
    return out;
}

template <typename T>
void VaeModel<T>::reset_encoder_optimizer_state() {
    for (auto& enc : encoders)
        for (auto* p : enc.parameters()) p->reset_optimizer_state();
}

template <typename T>
std::int64_t VaeModel<T>::parameter_count() const {
    std::int64_t n = decoder.parameter_count();
    for (const auto& enc : encoders) n += enc.parameter_count();
    return n;
}

template <typename T>
VaeModel<T> build_deft_model(int groups, int latents_per_group, int resolution, int channels, Rng& rng) {
    if (groups < 1 || latents_per_group < 1)
        throw std::invalid_argument("build_deft_model: groups and latents per group must be >= 1");
    VaeModel<T> m;
    m.groups = groups;
    m.latents_per_group = latents_per_group;
    m.resolution = resolution;
    m.channels = channels;
    m.lite_encoders = true;
    for (int g = 0; g < groups; ++g)
        m.encoders.emplace_back(NetworkSpec::lite_encoder(resolution, channels, latents_per_group),
                                "enc" + std::to_string(g), rng);
    m.decoder = Network<T>(NetworkSpec::decoder(resolution, channels, m.latent_dim()), "dec", rng);
    return m;
}

template <typename T>
VaeModel<T> build_baseline_model(int latent_dim, int resolution, int channels, Rng& rng) {
    if (latent_dim < 1) throw std::invalid_argument("build_baseline_model: latent_dim must be >= 1");
    VaeModel<T> m;
    m.groups = 1;
    m.latents_per_group = latent_dim;
    m.resolution = resolution;
    m.channels = channels;
    m.lite_encoders = false;
    m.encoders.emplace_back(NetworkSpec::standard_encoder(resolution, channels, latent_dim), "enc0", rng);
    m.decoder = Network<T>(NetworkSpec::decoder(resolution, channels, latent_dim), "dec", rng);
    return m;
}

template struct VaeModel<float>;
template struct VaeModel<double>;
template VaeModel<float> build_deft_model<float>(int, int, int, int, Rng&);
template VaeModel<double> build_deft_model<double>(int, int, int, int, Rng&);
template VaeModel<float> build_baseline_model<float>(int, int, int, Rng&);
template VaeModel<double> build_baseline_model<double>(int, int, int, Rng&);

}  // namespace deft
