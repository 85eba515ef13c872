#ifndef DEFT_MODEL_HPP
#define DEFT_MODEL_HPP

#include <string>
#include <vector>

#include "deft/nn.hpp"

namespace deft {

// G encoder groups feeding one shared decoder. The decoder always sees the
// concatenation of all groups' latents, in group order. G=1 with the standard
// encoder is the baseline single-encoder VAE.
template <typename T>
struct VaeModel {
    int groups = 1;
    int latents_per_group = 1;
    int resolution = 16;
    int channels = 1;
    bool lite_encoders = true;

    std::vector<Network<T>> encoders;
    Network<T> decoder;

    int latent_dim() const { return groups * latents_per_group; }

    struct Posterior {
        typename Tape<T>::Id mean;
        typename Tape<T>::Id logvar;
    };

    // Returns concatenated per-group posteriors, [N, G*K] each.
    Posterior encode(Tape<T>& tape, typename Tape<T>::Id x);
    typename Tape<T>::Id decode(Tape<T>& tape, typename Tape<T>::Id z);

    std::vector<Parameter<T>*> encoder_parameters(int group);
    std::vector<Parameter<T>*> decoder_parameters() { return decoder.parameters(); }
    std::vector<Parameter<T>*> parameters();

    void reset_encoder_optimizer_state();
    std::int64_t parameter_count() const;
};

template <typename T>
VaeModel<T> build_deft_model(int groups, int latents_per_group, int resolution, int channels, Rng& rng);

template <typename T>
VaeModel<T> build_baseline_model(int latent_dim, int resolution, int channels, Rng& rng);

}  // namespace deft

#endif
