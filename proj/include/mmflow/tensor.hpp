#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mmflow/error.hpp"

namespace mmflow {

// ----- tensor storage -----

// Dense float32 tensor of rank 1..3. Gradient buffer is allocated lazily by
// the first adjoint that accumulates into it.
struct TensorData {
    std::vector<int> shape;
    std::vector<float> v;
    std::vector<float> g;
    bool requires_grad = false;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(p_); }
    const std::vector<int>& shape() const;
    int64_t numel() const;
    int rows() const;  // rank-2 helpers
    int cols() const;
    bool requires_grad() const;
    float item() const;  // single-element tensors only

    std::vector<float>& data();
    const std::vector<float>& data() const;
    // Gradient, allocated as zeros on first access.
    std::vector<float>& grad();
    void zero_grad();
    bool has_grad() const;

    float at(int i) const;
    float at(int i, int j) const;
    void set(int i, int j, float x);

    Tensor detached_copy() const;  // same values, no grad, no history

    std::shared_ptr<TensorData> ptr() const { return p_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> p) : p_(std::move(p)) {}
    std::shared_ptr<TensorData> p_;
};

// ----- tape -----

// Ordered record of the backward closures for every op executed while grad
// mode is on. backward() replays it in reverse and clears it; a second
// backward without re-running the forward pass is an error.
class Tape {
public:
    static Tape& active();

    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    bool grad_mode() const { return grad_depth_ == 0; }
    void push_no_grad() { ++grad_depth_; }
    void pop_no_grad() { --grad_depth_; }

    void replay_reverse();

private:
    std::vector<std::function<void()>> nodes_;
    int grad_depth_ = 0;
};

struct NoGradGuard {
    NoGradGuard() { Tape::active().push_no_grad(); }
    ~NoGradGuard() { Tape::active().pop_no_grad(); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Seeds d(loss)/d(loss) = 1, replays the tape in reverse, then clears it.
// loss must be a single-element tensor.
void backward(const Tensor& loss);

// ----- ops -----
// Elementwise binaries accept b of the same shape, a single-element tensor,
// or a bias row (rank-1 of length cols, broadcast over the rows of a).

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor silu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
// Per-row normalization to zero mean / unit variance (epsilon 1e-5), then
// y = xhat * gain + bias with gain/bias broadcast as rows.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int start, int len);
Tensor slice_cols(const Tensor& a, int start, int len);
// Same elements, new shape (element count preserved).
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor sum(const Tensor& a);
// Mean squared error over all elements.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

// ----- optimizer -----

// Decoupled weight decay Adam. Holds first/second moment buffers and the
// shared step counter used for bias correction.
class AdamW {
public:
    AdamW(float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f,
          float weight_decay = 0.01f);

    // One update over params using their current .grad() buffers.
    void step(const std::vector<Tensor>& params, float lr);

    int64_t steps_taken() const { return t_; }

private:
    float beta1_, beta2_, eps_, weight_decay_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

std::string shape_str(const std::vector<int>& shape);

}  // namespace mmflow
