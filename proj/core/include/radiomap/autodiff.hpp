#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace radiomap {

// Dense row-major tensor of up to 4 dims (batch, channel, height, width).
// The scalar type is a template parameter: float carries training, double
// backs the finite-difference gradient checks.
template <typename S>
struct TensorT {
    std::vector<int> dims;
    std::vector<S> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> d);
    static TensorT zeros(std::vector<int> d) { return TensorT(std::move(d)); }
    static TensorT full(std::vector<int> d, S value);

    std::int64_t numel() const;
    int dim(int i) const { return dims[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(dims.size()); }

    bool operator==(const TensorT&) const = default;
};

using Tensor = TensorT<float>;

// Reverse-mode tape. Operations record a closure that propagates the
// output gradient to the inputs; backward() runs the closures in exact
// reverse recording order. Single-threaded per tape.
template <typename S>
class TapeT {
public:
    using T = TensorT<S>;

    // Registers a tensor and returns its node id.
    int track(T value, bool requires_grad);

    const T& value(int id) const;
    bool requires_grad(int id) const;
    // Gradient of a tracked tensor after backward(). Throws Error for
    // nodes with requires_grad == false: gradients must never flow there.
    const T& grad(int id) const;

    std::size_t node_count() const { return nodes_.size(); }

    // ---- operations (all validate shapes, all register gradients) ----

    // Cross-correlation, odd square kernels. x [N,Ci,H,W], w [Co,Ci,k,k],
    // bias [Co] or -1 for none.
    int conv2d(int x, int w, int bias, int stride, int padding);
    // w [C,1,k,k], one filter per channel.
    int depthwise_conv2d(int x, int w, int bias, int stride, int padding);
    // x [N,T,Din], w [Dout,Din], bias [Dout] or -1.
    int linear(int x, int w, int bias);

    int gelu(int x);    // exact erf form
    int sigmoid(int x);
    // x [N,C,H,W], gamma/beta [C]; statistics per (sample, group).
    int group_norm(int x, int gamma, int beta, int groups, double eps = 1e-5);

    int upsample_nearest(int x, int factor);
    int avg_pool(int x, int kernel, int stride);
    int global_avg_pool(int x); // -> [N,C,1,1]
    int concat_channels(int a, int b);

    int add(int a, int b); // same shape
    int mul(int a, int b); // same shape
    int affine(int x, double mul, double add);
    int clamp01(int x); // zero gradient outside [0,1]
    // x [N,C,H,W] scaled per channel by s [N,C,1,1].
    int scale_channels(int x, int s);

    int matmul(int a, int b);    // [N,T,K] x [N,K,U]
    int matmul_nt(int a, int b); // [N,T,K] x [N,U,K] -> [N,T,U]
    int softmax_lastdim(int x);
    int nchw_to_tokens(int x); // [N,C,H,W] -> [N,H*W,C]
    int tokens_to_nchw(int x, int height, int width);

    // softmax(Q K^T / sqrt(D)) V with learned projections, single head.
    int scaled_dot_attention(int x, int wq, int bq, int wk, int bk, int wv, int bv, int wo,
                             int bo);

    // Mean of (pred-target)^2 over unmasked elements -> scalar node.
    // target and mask are plain tensors; mask entries are 0 or 1 and must
    // not all be 0.
    int mse_loss(int pred, const T& target, const T* mask = nullptr);
    int sum(int x); // -> scalar node

    // Propagates from a scalar loss node through the whole tape.
    void backward(int loss);

private:
    struct Node {
        T value;
        T grad;
        bool requires_grad = false;
        bool grad_alloc = false;
    };

    T& grad_buffer(int id);
    void add_op(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
    int result(T value, bool requires_grad);
    void check(int id) const;

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> ops_;
};

using Tape = TapeT<float>;

// Adam with bias correction: beta1 0.9, beta2 0.999, eps 1e-8.
template <typename S>
struct AdamStateT {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<TensorT<S>> m;
    std::vector<TensorT<S>> v;
};

using AdamState = AdamStateT<float>;

// In-place update. Initializes the moment accumulators on first use;
// afterwards their shapes must keep matching the parameters.
template <typename S>
void adam_step(std::vector<TensorT<S>*>& params, const std::vector<const TensorT<S>*>& grads,
               AdamStateT<S>& state);

extern template struct TensorT<float>;
extern template struct TensorT<double>;
extern template class TapeT<float>;
extern template class TapeT<double>;
extern template struct AdamStateT<float>;
extern template struct AdamStateT<double>;
extern template void adam_step<float>(std::vector<TensorT<float>*>&,
                                      const std::vector<const TensorT<float>*>&,
                                      AdamStateT<float>&);
extern template void adam_step<double>(std::vector<TensorT<double>*>&,
                                       const std::vector<const TensorT<double>*>&,
                                       AdamStateT<double>&);

} // namespace radiomap
