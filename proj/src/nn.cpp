#include "deft/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace deft {

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

// Walks the spec and returns the shape after each layer; index 0 is the input.
std::vector<Shape> shape_chain(const NetworkSpec& spec) {
    std::vector<Shape> chain;
    chain.push_back(spec.input_shape);
    Shape cur = spec.input_shape;
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerSpec::Kind::Conv: {
                if (cur.size() != 3) throw std::invalid_argument("conv layer needs a CxHxW input");
                const int h = cur[1], w = cur[2];
                if (h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2)
                    throw std::invalid_argument("conv layer needs even spatial extents >= 2");
                cur = {l.width, h / 2, w / 2};
                break;
            }
            case LayerSpec::Kind::TConv: {
                if (cur.size() != 3) throw std::invalid_argument("tconv layer needs a CxHxW input");
                cur = {l.width, cur[1] * 2, cur[2] * 2};
                break;
            }
            case LayerSpec::Kind::Dense: {
                // dense flattens whatever comes in
                cur = {l.width};
                break;
            }
            case LayerSpec::Kind::Relu:
                break;
            case LayerSpec::Kind::Reshape: {
                if (shape_numel(l.reshape_to) != shape_numel(cur))
                    throw std::invalid_argument("reshape layer changes element count");
                cur = l.reshape_to;
                break;
            }
        }
        chain.push_back(cur);
    }
    return chain;
}

}  // namespace

void NetworkSpec::validate() const { shape_chain(*this); }

Shape NetworkSpec::output_shape() const { return shape_chain(*this).back(); }

bool supported_resolution(int resolution) { return is_pow2(resolution) && resolution >= 16; }

NetworkSpec NetworkSpec::lite_encoder(int resolution, int channels, int latents) {
    if (!supported_resolution(resolution))
        throw std::invalid_argument("encoder resolution must be a power of two >= 16");
    NetworkSpec s;
    s.input_shape = {channels, resolution, resolution};
    s.layers = {LayerSpec::conv(8),  LayerSpec::relu(), LayerSpec::conv(8),  LayerSpec::relu(),
                LayerSpec::conv(16), LayerSpec::relu(), LayerSpec::conv(16), LayerSpec::relu(),
                LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(2 * latents)};
    s.validate();
    return s;
}

NetworkSpec NetworkSpec::standard_encoder(int resolution, int channels, int latents) {
    if (!supported_resolution(resolution))
        throw std::invalid_argument("encoder resolution must be a power of two >= 16");
    NetworkSpec s;
    s.input_shape = {channels, resolution, resolution};
    s.layers = {LayerSpec::conv(32), LayerSpec::relu(), LayerSpec::conv(32), LayerSpec::relu(),
                LayerSpec::conv(64), LayerSpec::relu(), LayerSpec::conv(64), LayerSpec::relu(),
                LayerSpec::dense(256), LayerSpec::relu(), LayerSpec::dense(2 * latents)};
    s.validate();
    return s;
}

NetworkSpec NetworkSpec::decoder(int resolution, int channels, int latent_dim) {
    if (!supported_resolution(resolution))
        throw std::invalid_argument("decoder resolution must be a power of two >= 16");
    NetworkSpec s;
    s.input_shape = {latent_dim};
    s.layers = {LayerSpec::dense(256), LayerSpec::relu(), LayerSpec::dense(4 * 4 * 64),
                LayerSpec::relu(), LayerSpec::reshape({64, 4, 4})};
    // upsample 4 -> resolution; hidden channel ladder is the tail of {64,32,32}
    int ups = 0;
    for (int r = 4; r < resolution; r *= 2) ++ups;
    const std::vector<int> ladder = {64, 32, 32};
    for (int i = 0; i < ups - 1; ++i) {
        const int ch = ladder[ladder.size() - static_cast<std::size_t>(ups - 1) + static_cast<std::size_t>(i)];
        s.layers.push_back(LayerSpec::tconv(ch));
        s.layers.push_back(LayerSpec::relu());
    }
    s.layers.push_back(LayerSpec::tconv(channels));  // logits, no activation
    s.validate();
    return s;
}

template <typename T>
Network<T>::Network(NetworkSpec sp, const std::string& name_prefix, Rng& rng) : spec(std::move(sp)) {
    spec.validate();
    Shape cur = spec.input_shape;
    int index = 0;
    auto uniform_init = [&rng](Tensor<T>& w, int fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    for (const LayerSpec& l : spec.layers) {
        const std::string base = name_prefix + "/" + std::to_string(index);
        switch (l.kind) {
            case LayerSpec::Kind::Conv: {
                const int c = cur[0];
                Parameter<T> w(base + "/w", Tensor<T>({l.width, c, 4, 4}));
                uniform_init(w.value, c * 16);
                params.push_back(std::move(w));
                params.emplace_back(base + "/b", Tensor<T>({l.width}));
                cur = {l.width, cur[1] / 2, cur[2] / 2};
                break;
            }
            case LayerSpec::Kind::TConv: {
                const int c = cur[0];
                Parameter<T> w(base + "/w", Tensor<T>({c, l.width, 4, 4}));
                // each output position receives 4 taps per input channel
                uniform_init(w.value, c * 4);
                params.push_back(std::move(w));
                params.emplace_back(base + "/b", Tensor<T>({l.width}));
                cur = {l.width, cur[1] * 2, cur[2] * 2};
                break;
            }
            case LayerSpec::Kind::Dense: {
                const int in = static_cast<int>(shape_numel(cur));
                Parameter<T> w(base + "/w", Tensor<T>({in, l.width}));
                uniform_init(w.value, in);
                params.push_back(std::move(w));
                params.emplace_back(base + "/b", Tensor<T>({l.width}));
                cur = {l.width};
                break;
            }
            case LayerSpec::Kind::Relu:
                break;
            case LayerSpec::Kind::Reshape:
                cur = l.reshape_to;
                break;
        }
        ++index;
    }
}

template <typename T>
typename Tape<T>::Id Network<T>::forward(Tape<T>& tape, typename Tape<T>::Id input) {
    using Id = typename Tape<T>::Id;
    const Tensor<T>& in = tape.val(input);
    if (in.rank() < 2) throw std::invalid_argument("network forward expects a batched input");
    Shape per_sample(in.shape.begin() + 1, in.shape.end());
    if (per_sample != spec.input_shape)
        throw std::invalid_argument("network forward: input shape " + shape_str(per_sample) +
                                    " does not match declared " + shape_str(spec.input_shape));
    const int n = in.extent(0);
    Id cur = input;
    std::size_t pi = 0;
    for (const LayerSpec& l : spec.layers) {
        switch (l.kind) {
            case LayerSpec::Kind::Conv: {
                Id w = tape.parameter(params[pi]);
                Id b = tape.parameter(params[pi + 1]);
                pi += 2;
                cur = tape.conv2d(cur, w, b);
                break;
            }
            case LayerSpec::Kind::TConv: {
                Id w = tape.parameter(params[pi]);
                Id b = tape.parameter(params[pi + 1]);
                pi += 2;
                cur = tape.conv2d_transpose(cur, w, b);
                break;
            }
            case LayerSpec::Kind::Dense: {
                const Tensor<T>& cv = tape.val(cur);
                if (cv.rank() != 2) {
                    const int flat = static_cast<int>(cv.size() / n);
                    cur = tape.reshape(cur, {n, flat});
                }
                Id w = tape.parameter(params[pi]);
                Id b = tape.parameter(params[pi + 1]);
                pi += 2;
                cur = tape.add_row_bias(tape.matmul(cur, w), b);
                break;
            }
            case LayerSpec::Kind::Relu:
                cur = tape.relu(cur);
                break;
            case LayerSpec::Kind::Reshape: {
                Shape s = {n};
                s.insert(s.end(), l.reshape_to.begin(), l.reshape_to.end());
                cur = tape.reshape(cur, std::move(s));
                break;
            }
        }
    }
    return cur;
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::parameters() {
    std::vector<Parameter<T>*> out;
    out.reserve(params.size());
    for (auto& p : params) out.push_back(&p);
    return out;
}

template <typename T>
std::int64_t Network<T>::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

template struct Network<float>;
template struct Network<double>;

}  // namespace deft
