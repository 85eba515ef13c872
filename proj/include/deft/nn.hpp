#ifndef DEFT_NN_HPP
#define DEFT_NN_HPP

#include <string>
#include <vector>

#include "deft/autograd.hpp"
#include "deft/rng.hpp"
#include "deft/tensor.hpp"

namespace deft {

// One layer of a feed-forward stack. Conv and TConv are fixed 4x4 kernels
// with stride 2 and padding 1, so they exactly halve / double even extents.
struct LayerSpec {
    enum class Kind { Conv, TConv, Dense, Relu, Reshape };
    Kind kind = Kind::Dense;
    int width = 0;     // output channels (Conv/TConv) or output width (Dense)
    Shape reshape_to;  // per-sample target shape for Reshape

    static LayerSpec conv(int channels) { return {Kind::Conv, channels, {}}; }
    static LayerSpec tconv(int channels) { return {Kind::TConv, channels, {}}; }
    static LayerSpec dense(int width) { return {Kind::Dense, width, {}}; }
    static LayerSpec relu() { return {Kind::Relu, 0, {}}; }
    static LayerSpec reshape(Shape s) { return {Kind::Reshape, 0, std::move(s)}; }
};

// Ordered layer descriptors plus the declared per-sample input shape.
// validate() walks the chain once and throws on any incompatibility.
struct NetworkSpec {
    Shape input_shape;  // per-sample, e.g. {1,16,16} or {latent_dim}
    std::vector<LayerSpec> layers;

    void validate() const;
    Shape output_shape() const;

    // Table-style stacks. The conv ladder assumes the resolution is a power
    // of two >= 16; four stride-2 convs then land on a spatial extent >= 1,
    // and the decoder upsamples from 4x4 back to the target resolution.
    static NetworkSpec lite_encoder(int resolution, int channels, int latents);
    static NetworkSpec standard_encoder(int resolution, int channels, int latents);
    static NetworkSpec decoder(int resolution, int channels, int latent_dim);
};

bool supported_resolution(int resolution);

// A NetworkSpec bound to parameters.
template <typename T>
struct Network {
    NetworkSpec spec;
    std::vector<Parameter<T>> params;

    Network() = default;
    Network(NetworkSpec s, const std::string& name_prefix, Rng& rng);

    typename Tape<T>::Id forward(Tape<T>& tape, typename Tape<T>::Id input);

    std::vector<Parameter<T>*> parameters();
    std::int64_t parameter_count() const;
};

}  // namespace deft

#endif
