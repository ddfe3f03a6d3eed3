#include "mmflow/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <sstream>

namespace mmflow {

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void check_shape(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 3)
        throw UsageError("tensor: rank must be 1..3, got " + shape_str(shape));
    for (int d : shape)
        if (d <= 0) throw UsageError("tensor: nonpositive dim in " + shape_str(shape));
}

std::vector<float>& ensure_grad(const std::shared_ptr<TensorData>& p) {
    if (p->g.empty()) p->g.assign(p->v.size(), 0.0f);
    return p->g;
}

bool taping(const Tensor& a) {
    return Tape::active().grad_mode() && a.defined() && a.requires_grad();
}

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// Broadcast layouts for elementwise binaries.
enum class Bcast { Same, Scalar, Row };

Bcast classify_bcast(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Bcast::Same;
    if (b.numel() == 1) return Bcast::Scalar;
    if (b.shape().size() == 1 && a.shape().size() == 2 && b.numel() == a.cols())
        return Bcast::Row;
    throw UsageError("elementwise: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not broadcast");
}

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(BinOp op, const Tensor& a, const Tensor& b) {
    Bcast bc = classify_bcast(a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    const int64_t n = a.numel();
    const int64_t nc = bc == Bcast::Row ? a.cols() : 0;

    auto bval = [&](int64_t i) -> float {
        switch (bc) {
            case Bcast::Same: return bv[i];
            case Bcast::Scalar: return bv[0];
            default: return bv[i % nc];
        }
    };
    for (int64_t i = 0; i < n; ++i) {
        float x = av[i], y = bval(i);
        ov[i] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
    }

    bool rec = Tape::active().grad_mode() && (a.requires_grad() || b.requires_grad());
    if (rec) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), pb = b.ptr(), po = out.ptr();
        Tape::active().record([op, bc, nc, pa, pb, po] {
            const auto& og = po->g;
            if (og.empty()) return;
            const int64_t n = static_cast<int64_t>(po->v.size());
            if (pa->requires_grad) {
                auto& ga = ensure_grad(pa);
                for (int64_t i = 0; i < n; ++i) {
                    float d = og[i];
                    if (op == BinOp::Mul) {
                        float y = bc == Bcast::Same ? pb->v[i]
                                : bc == Bcast::Scalar ? pb->v[0]
                                                      : pb->v[i % nc];
                        d *= y;
                    }
                    ga[i] += d;
                }
            }
            if (pb->requires_grad) {
                auto& gb = ensure_grad(pb);
                for (int64_t i = 0; i < n; ++i) {
                    float d = og[i];
                    if (op == BinOp::Sub) d = -d;
                    if (op == BinOp::Mul) d = og[i] * pa->v[i];
                    int64_t j = bc == Bcast::Same ? i : bc == Bcast::Scalar ? 0 : i % nc;
                    gb[j] += d;
                }
            }
        });
    }
    return out;
}

Tensor unary_op(const Tensor& a, float (*fwd)(float), float (*dydx)(float)) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
    if (taping(a)) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), po = out.ptr();
        Tape::active().record([pa, po, dydx] {
            if (po->g.empty()) return;
            auto& ga = ensure_grad(pa);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += po->g[i] * dydx(pa->v[i]);
        });
    }
    return out;
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ----- Tensor -----

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    check_shape(shape);
    auto p = std::make_shared<TensorData>();
    p->v.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
    p->shape = std::move(shape);
    p->requires_grad = requires_grad;
    return Tensor(std::move(p));
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.data()) x = value;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    check_shape(shape);
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw UsageError("tensor: data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto p = std::make_shared<TensorData>();
    p->shape = std::move(shape);
    p->v = std::move(data);
    p->requires_grad = requires_grad;
    return Tensor(std::move(p));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const {
    if (!p_) throw UsageError("tensor: undefined handle");
    return p_->shape;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(p_ ? p_->v.size() : 0); }

int Tensor::rows() const {
    const auto& s = shape();
    if (s.size() != 2) throw UsageError("tensor: rows() needs rank 2, got " + shape_str(s));
    return s[0];
}

int Tensor::cols() const {
    const auto& s = shape();
    if (s.size() == 1) return s[0];
    if (s.size() != 2) throw UsageError("tensor: cols() needs rank 1 or 2, got " + shape_str(s));
    return s[1];
}

bool Tensor::requires_grad() const { return p_ && p_->requires_grad; }

float Tensor::item() const {
    if (numel() != 1) throw UsageError("tensor: item() on non-scalar " + shape_str(shape()));
    return p_->v[0];
}

std::vector<float>& Tensor::data() {
    if (!p_) throw UsageError("tensor: undefined handle");
    return p_->v;
}

const std::vector<float>& Tensor::data() const {
    if (!p_) throw UsageError("tensor: undefined handle");
    return p_->v;
}

std::vector<float>& Tensor::grad() {
    if (!p_) throw UsageError("tensor: undefined handle");
    return ensure_grad(p_);
}

void Tensor::zero_grad() {
    if (p_ && !p_->g.empty()) std::fill(p_->g.begin(), p_->g.end(), 0.0f);
}

bool Tensor::has_grad() const { return p_ && !p_->g.empty(); }

float Tensor::at(int i) const { return data().at(static_cast<size_t>(i)); }

float Tensor::at(int i, int j) const {
    return data().at(static_cast<size_t>(i) * cols() + j);
}

void Tensor::set(int i, int j, float x) {
    data().at(static_cast<size_t>(i) * cols() + j) = x;
}

Tensor Tensor::detached_copy() const {
    return from_data(shape(), data(), false);
}

// ----- Tape -----

Tape& Tape::active() {
    thread_local Tape tape;
    return tape;
}

void Tape::replay_reverse() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw UsageError("backward: loss must be a single element, got " +
                         shape_str(loss.shape()));
    Tape& tape = Tape::active();
    if (tape.size() == 0)
        throw UsageError("backward: tape is empty (forward pass not recorded, or "
                         "backward already consumed it)");
    loss.ptr()->g.assign(1, 1.0f);
    tape.replay_reverse();
    tape.clear();
}

// ----- ops -----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw UsageError("matmul: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are incompatible");
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out = Tensor::zeros({m, n});
    {
        ECMap A(a.data().data(), m, k), B(b.data().data(), k, n);
        EMap C(out.data().data(), m, n);
        C.noalias() = A * B;
    }
    bool rec = Tape::active().grad_mode() && (a.requires_grad() || b.requires_grad());
    if (rec) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), pb = b.ptr(), po = out.ptr();
        Tape::active().record([pa, pb, po, m, k, n] {
            if (po->g.empty()) return;
            ECMap dC(po->g.data(), m, n);
            ECMap A(pa->v.data(), m, k), B(pb->v.data(), k, n);
            if (pa->requires_grad) {
                EMap dA(ensure_grad(pa).data(), m, k);
                dA.noalias() += dC * B.transpose();
            }
            if (pb->requires_grad) {
                EMap dB(ensure_grad(pb).data(), k, n);
                dB.noalias() += A.transpose() * dC;
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2)
        throw UsageError("transpose: needs rank 2, got " + shape_str(a.shape()));
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.set(j, i, a.at(i, j));
    if (taping(a)) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), po = out.ptr();
        Tape::active().record([pa, po, m, n] {
            if (po->g.empty()) return;
            auto& ga = ensure_grad(pa);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ga[static_cast<size_t>(i) * n + j] += po->g[static_cast<size_t>(j) * m + i];
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Mul, a, b); }

Tensor scale(const Tensor& a, float s) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * s;
    if (taping(a)) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), po = out.ptr();
        Tape::active().record([pa, po, s] {
            if (po->g.empty()) return;
            auto& ga = ensure_grad(pa);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += po->g[i] * s;
        });
    }
    return out;
}

Tensor silu(const Tensor& a) {
    return unary_op(
        a, [](float x) { return x * sigmoidf(x); },
        [](float x) {
            float s = sigmoidf(x);
            return s * (1.0f + x * (1.0f - s));
        });
}

Tensor tanh_op(const Tensor& a) {
    return unary_op(
        a, [](float x) { return std::tanh(x); },
        [](float x) {
            float t = std::tanh(x);
            return 1.0f - t * t;
        });
}

Tensor softmax_rows(const Tensor& a) {
    if (a.shape().size() != 2)
        throw UsageError("softmax_rows: needs rank 2, got " + shape_str(a.shape()));
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < m; ++i) {
        float mx = a.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, a.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < n; ++j) denom += std::exp(static_cast<double>(a.at(i, j) - mx));
        for (int j = 0; j < n; ++j)
            out.set(i, j, static_cast<float>(std::exp(static_cast<double>(a.at(i, j) - mx)) / denom));
    }
    if (taping(a)) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), po = out.ptr();
        Tape::active().record([pa, po, m, n] {
            if (po->g.empty()) return;
            auto& ga = ensure_grad(pa);
            for (int i = 0; i < m; ++i) {
                const float* y = po->v.data() + static_cast<size_t>(i) * n;
                const float* dy = po->g.data() + static_cast<size_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += static_cast<double>(y[j]) * dy[j];
                float* gx = ga.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j)
                    gx[j] += y[j] * (dy[j] - static_cast<float>(dot));
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
    if (a.shape().size() != 2)
        throw UsageError("layer_norm: needs rank 2, got " + shape_str(a.shape()));
    const int m = a.shape()[0], n = a.shape()[1];
    if (n < 2) throw UsageError("layer_norm: rows need at least 2 elements");
    if (gain.numel() != n || bias.numel() != n)
        throw UsageError("layer_norm: gain/bias length must equal row width " +
                         std::to_string(n));
    constexpr double kEps = 1e-5;

    Tensor out = Tensor::zeros(a.shape());
    // Save per-row inverse stddev and normalized values for the backward pass.
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(m) * n);
    auto rstd = std::make_shared<std::vector<float>>(m);
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += a.at(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = a.at(i, j) - mean;
            var += d * d;
        }
        var /= n;
        double rs = 1.0 / std::sqrt(var + kEps);
        (*rstd)[i] = static_cast<float>(rs);
        for (int j = 0; j < n; ++j) {
            float xh = static_cast<float>((a.at(i, j) - mean) * rs);
            (*xhat)[static_cast<size_t>(i) * n + j] = xh;
            out.set(i, j, xh * gain.data()[j] + bias.data()[j]);
        }
    }
    bool rec = Tape::active().grad_mode() &&
               (a.requires_grad() || gain.requires_grad() || bias.requires_grad());
    if (rec) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), pg = gain.ptr(), pb = bias.ptr(), po = out.ptr();
        Tape::active().record([pa, pg, pb, po, xhat, rstd, m, n] {
            if (po->g.empty()) return;
            for (int i = 0; i < m; ++i) {
                const float* dy = po->g.data() + static_cast<size_t>(i) * n;
                const float* xh = xhat->data() + static_cast<size_t>(i) * n;
                if (pg->requires_grad) {
                    auto& gg = ensure_grad(pg);
                    for (int j = 0; j < n; ++j) gg[j] += dy[j] * xh[j];
                }
                if (pb->requires_grad) {
                    auto& gb = ensure_grad(pb);
                    for (int j = 0; j < n; ++j) gb[j] += dy[j];
                }
                if (pa->requires_grad) {
                    auto& ga = ensure_grad(pa);
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < n; ++j) {
                        double dxh = static_cast<double>(dy[j]) * pg->v[j];
                        s1 += dxh;
                        s2 += dxh * xh[j];
                    }
                    s1 /= n;
                    s2 /= n;
                    float* gx = ga.data() + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) {
                        double dxh = static_cast<double>(dy[j]) * pg->v[j];
                        gx[j] += static_cast<float>((dxh - s1 - xh[j] * s2) * (*rstd)[i]);
                    }
                }
            }
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("concat_rows: no inputs");
    int n = -1, total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p.shape().size() != 2)
            throw UsageError("concat_rows: needs rank 2, got " + shape_str(p.shape()));
        if (n < 0) n = p.shape()[1];
        if (p.shape()[1] != n)
            throw UsageError("concat_rows: column mismatch " + shape_str(p.shape()));
        total += p.shape()[0];
        any_grad = any_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros({total, n});
    int row = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data().data() + static_cast<size_t>(row) * n, p.data().data(),
                    p.data().size() * sizeof(float));
        row += p.shape()[0];
    }
    if (Tape::active().grad_mode() && any_grad) {
        out.ptr()->requires_grad = true;
        std::vector<std::shared_ptr<TensorData>> ins;
        for (const auto& p : parts) ins.push_back(p.ptr());
        auto po = out.ptr();
        Tape::active().record([ins, po, n] {
            if (po->g.empty()) return;
            int row = 0;
            for (const auto& p : ins) {
                int r = p->shape[0];
                if (p->requires_grad) {
                    auto& g = ensure_grad(p);
                    const float* src = po->g.data() + static_cast<size_t>(row) * n;
                    for (size_t i = 0; i < g.size(); ++i) g[i] += src[i];
                }
                row += r;
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: no inputs");
    int m = -1, total = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p.shape().size() != 2)
            throw UsageError("concat_cols: needs rank 2, got " + shape_str(p.shape()));
        if (m < 0) m = p.shape()[0];
        if (p.shape()[0] != m)
            throw UsageError("concat_cols: row mismatch " + shape_str(p.shape()));
        total += p.shape()[1];
        any_grad = any_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros({m, total});
    int col = 0;
    for (const auto& p : parts) {
        const int n = p.shape()[1];
        for (int i = 0; i < m; ++i)
            std::memcpy(out.data().data() + static_cast<size_t>(i) * total + col,
                        p.data().data() + static_cast<size_t>(i) * n,
                        static_cast<size_t>(n) * sizeof(float));
        col += n;
    }
    if (Tape::active().grad_mode() && any_grad) {
        out.ptr()->requires_grad = true;
        std::vector<std::shared_ptr<TensorData>> ins;
        for (const auto& p : parts) ins.push_back(p.ptr());
        auto po = out.ptr();
        Tape::active().record([ins, po, m, total] {
            if (po->g.empty()) return;
            int col = 0;
            for (const auto& p : ins) {
                const int n = p->shape[1];
                if (p->requires_grad) {
                    auto& g = ensure_grad(p);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < n; ++j)
                            g[static_cast<size_t>(i) * n + j] +=
                                po->g[static_cast<size_t>(i) * total + col + j];
                }
                col += n;
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw UsageError("reshape: bad dim in " + shape_str(shape));
        n *= static_cast<size_t>(d);
    }
    if (n != a.numel())
        throw UsageError("reshape: " + shape_str(a.shape()) + " has " + std::to_string(a.numel()) +
                         " elements, target " + shape_str(shape) + " has " + std::to_string(n));
    Tensor out = Tensor::from_data(std::move(shape), a.data());
    if (taping(a)) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), po = out.ptr();
        Tape::active().record([pa, po] {
            if (po->g.empty()) return;
            auto& ga = ensure_grad(pa);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += po->g[i];
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int start, int len) {
    if (a.shape().size() != 2)
        throw UsageError("slice_rows: needs rank 2, got " + shape_str(a.shape()));
    const int m = a.shape()[0], n = a.shape()[1];
    if (start < 0 || len <= 0 || start + len > m)
        throw UsageError("slice_rows: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + std::to_string(m));
    Tensor out = Tensor::zeros({len, n});
    std::memcpy(out.data().data(), a.data().data() + static_cast<size_t>(start) * n,
                out.data().size() * sizeof(float));
    if (taping(a)) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), po = out.ptr();
        Tape::active().record([pa, po, start, n] {
            if (po->g.empty()) return;
            auto& ga = ensure_grad(pa);
            float* dst = ga.data() + static_cast<size_t>(start) * n;
            for (size_t i = 0; i < po->g.size(); ++i) dst[i] += po->g[i];
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
    if (a.shape().size() != 2)
        throw UsageError("slice_cols: needs rank 2, got " + shape_str(a.shape()));
    const int m = a.shape()[0], n = a.shape()[1];
    if (start < 0 || len <= 0 || start + len > n)
        throw UsageError("slice_cols: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + std::to_string(n));
    Tensor out = Tensor::zeros({m, len});
    for (int i = 0; i < m; ++i)
        std::memcpy(out.data().data() + static_cast<size_t>(i) * len,
                    a.data().data() + static_cast<size_t>(i) * n + start,
                    static_cast<size_t>(len) * sizeof(float));
    if (taping(a)) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), po = out.ptr();
        Tape::active().record([pa, po, start, m, n] {
            if (po->g.empty()) return;
            auto& ga = ensure_grad(pa);
            const int len = po->shape[1];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < len; ++j)
                    ga[static_cast<size_t>(i) * n + start + j] +=
                        po->g[static_cast<size_t>(i) * len + j];
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (float x : a.data()) total += x;
    Tensor out = Tensor::scalar(static_cast<float>(total));
    if (taping(a)) {
        out.ptr()->requires_grad = true;
        auto pa = a.ptr(), po = out.ptr();
        Tape::active().record([pa, po] {
            if (po->g.empty()) return;
            auto& ga = ensure_grad(pa);
            for (auto& g : ga) g += po->g[0];
        });
    }
    return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw UsageError("mse_loss: shapes " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()) + " differ");
    const int64_t n = pred.numel();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(pred.data()[i]) - target.data()[i];
        total += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(total / n));
    bool rec = Tape::active().grad_mode() &&
               (pred.requires_grad() || target.requires_grad());
    if (rec) {
        out.ptr()->requires_grad = true;
        auto pp = pred.ptr(), pt = target.ptr(), po = out.ptr();
        Tape::active().record([pp, pt, po, n] {
            if (po->g.empty()) return;
            const float c = 2.0f * po->g[0] / static_cast<float>(n);
            for (int64_t i = 0; i < n; ++i) {
                float d = pp->v[i] - pt->v[i];
                if (pp->requires_grad) ensure_grad(pp)[i] += c * d;
                if (pt->requires_grad) ensure_grad(pt)[i] -= c * d;
            }
        });
    }
    return out;
}

// ----- AdamW -----

AdamW::AdamW(float beta1, float beta2, float eps, float weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(const std::vector<Tensor>& params, float lr) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t k = 0; k < params.size(); ++k) {
            m_[k].assign(params[k].data().size(), 0.0f);
            v_[k].assign(params[k].data().size(), 0.0f);
        }
    }
    if (m_.size() != params.size())
        throw UsageError("adamw: parameter count changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
    for (size_t k = 0; k < params.size(); ++k) {
        auto p = params[k].ptr();
        if (m_[k].size() != p->v.size())
            throw UsageError("adamw: parameter size changed between steps");
        const float* g = p->g.empty() ? nullptr : p->g.data();
        for (size_t i = 0; i < p->v.size(); ++i) {
            float gi = g ? g[i] : 0.0f;
            m_[k][i] = beta1_ * m_[k][i] + (1.0f - beta1_) * gi;
            v_[k][i] = beta2_ * v_[k][i] + (1.0f - beta2_) * gi * gi;
            double mhat = m_[k][i] / bc1;
            double vhat = v_[k][i] / bc2;
            double upd = mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p->v[i];
            p->v[i] = static_cast<float>(p->v[i] - lr * upd);
        }
    }
}

}  // namespace mmflow
