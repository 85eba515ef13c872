#ifndef DEFT_AUTOGRAD_HPP
#define DEFT_AUTOGRAD_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deft/tensor.hpp"

namespace deft {

// Trainable value plus its gradient and Adam state. Shapes of gradient and
// moment buffers always equal the value shape.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m;
    Tensor<T> adam_v;
    std::int64_t step_count = 0;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v)
        : name(std::move(n)),
          value(std::move(v)),
          grad(value.shape),
          adam_m(value.shape),
          adam_v(value.shape) {}

    void zero_grad() { grad.fill(T(0)); }
    void reset_optimizer_state() {
        adam_m.fill(T(0));
        adam_v.fill(T(0));
        step_count = 0;
    }
};

// Reverse-mode tape. Operations append nodes during the forward pass;
// backward() walks the tape once in reverse and accumulates dLoss/dParameter
// into each reachable Parameter's grad buffer. A tape is single-use.
template <typename T>
class Tape {
  public:
    using Id = int;

    Id constant(Tensor<T> v);
    Id parameter(Parameter<T>& p);

    // elementwise / scalar
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id add_scalar(Id a, T c);
    Id mul_scalar(Id a, T c);
    Id abs(Id a);
    Id relu(Id a);

    // shape
    Id reshape(Id a, Shape s);
    Id col_slice(Id a, int c0, int c1);           // [N,D] -> [N,c1-c0]
    Id col_concat(const std::vector<Id>& parts);  // [N,Di] -> [N,sum Di]

    // linear algebra
    Id matmul(Id a, Id b);          // [M,K] x [K,N]
    Id add_row_bias(Id a, Id bias); // [M,N] + [N]

    // convolutions, fixed 4x4 kernel / stride 2 / pad 1
    Id conv2d(Id x, Id w, Id b);           // x [N,C,H,W], w [F,C,4,4], b [F]
    Id conv2d_transpose(Id x, Id w, Id b); // x [N,C,H,W], w [C,F,4,4], b [F]

    // reductions
    Id row_sum(Id a);   // [N,D] -> [N]
    Id sum_all(Id a);   // -> scalar
    Id mean_all(Id a);  // -> scalar
    Id sum_axis2(Id a);        // [M,K,D] -> [M,K]
    Id logsumexp_axis1(Id a);  // [M,K,D] -> [M,D]
    Id logsumexp_last(Id a);   // [M,K]   -> [M]

    // VAE-specific fused ops
    Id reparameterize(Id mean, Id logvar, Tensor<T> noise);
    Id kl_unit_gaussian_terms(Id mean, Id logvar);              // 0.5(mu^2+e^lv-1-lv)
    Id bernoulli_nll(Id logits, Tensor<T> targets);             // stable BCE-with-logits
    Id std_normal_log_density(Id z);                            // [M,D]
    Id gaussian_log_density_diag(Id z, Id mean, Id logvar);     // [M,D]
    Id gaussian_log_density_pairs(Id z, Id mean, Id logvar);    // [M,M,D]

    const Tensor<T>& val(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const Tensor<T>& grad(Id id) const;
    bool has_grad(Id id) const;

    // Runs reverse accumulation from a scalar loss. Throws if the loss is not
    // a single element, is non-finite, or the tape was already consumed.
    void backward(Id loss);

    int num_nodes() const { return static_cast<int>(nodes_.size()); }

  private:
    using BackwardFn = std::function<void(Tape&, Id)>;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        BackwardFn back;
        Parameter<T>* param = nullptr;
    };

    std::vector<Node> nodes_;
    bool consumed_ = false;

    Id push(Tensor<T> value, bool needs_grad, BackwardFn back);
    bool needs(Id id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    Tensor<T>& ensure_grad(Id id);
    void accumulate(Id id, const Tensor<T>& g);
    void accumulate_scaled(Id id, const Tensor<T>& g, T scale);

    friend struct TapeTestAccess;
};

// Bias-corrected Adam. Checks gradients for non-finite values, applies the
// update, clears gradients, and bumps step_count by one.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, T learning_rate, T beta1 = T(0.9),
               T beta2 = T(0.999), T epsilon = T(1e-8));

template <typename T>
void scale_gradients(const std::vector<Parameter<T>*>& params, T factor);

}  // namespace deft

#endif
