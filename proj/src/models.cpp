#include "mmflow/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "mmflow/error.hpp"
#include "mmflow/rng.hpp"

namespace mmflow {

std::vector<float> sinusoidal_time_embed(double t, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw UsageError("sinusoidal_time_embed: dim must be even and >= 2, got " +
                         std::to_string(dim));
    const int half = dim / 2;
    const double scaled = 1000.0 * t;
    std::vector<float> e(static_cast<size_t>(dim));
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * k / half);
        e[static_cast<size_t>(k)] = static_cast<float>(std::sin(scaled * freq));
        e[static_cast<size_t>(half + k)] = static_cast<float>(std::cos(scaled * freq));
    }
    return e;
}

Tensor joint_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
        throw UsageError("joint_attention: needs rank-2 q, k, v");
    const int d = q.shape()[1];
    if (k.shape()[1] != d || k.shape()[0] != v.shape()[0])
        throw UsageError("joint_attention: q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()) + " disagree");
    Tensor scores = scale(matmul(q, transpose(k)), 1.0f / std::sqrt(static_cast<float>(d)));
    return matmul(softmax_rows(scores), v);
}

Tensor joint_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
    if (mask.shape() != std::vector<int>{q.shape()[0], k.shape()[0]})
        throw UsageError("joint_attention: mask " + shape_str(mask.shape()) + " must be [" +
                         std::to_string(q.shape()[0]) + "," + std::to_string(k.shape()[0]) + "]");
    const int d = q.shape()[1];
    Tensor scores = scale(matmul(q, transpose(k)), 1.0f / std::sqrt(static_cast<float>(d)));
    return matmul(softmax_rows(add(scores, mask)), v);
}

// ----------------------------------------------------------------------------

std::vector<Tensor> VelocityModel::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
}

Tensor VelocityModel::param(const std::string& name) const {
    for (const auto& [n, p] : named_parameters())
        if (n == name) return p;
    throw UsageError("no parameter named '" + name + "'");
}

size_t VelocityModel::parameter_count() const {
    size_t n = 0;
    for (const auto& [name, p] : named_parameters()) n += p.numel();
    return n;
}

void VelocityModel::check_inputs(const std::vector<Tensor>& latents,
                                 const std::vector<double>& times) const {
    const auto& specs = modalities();
    if (latents.size() != specs.size() || times.size() != specs.size())
        throw UsageError("forward: expected " + std::to_string(specs.size()) +
                         " latents and times, got " + std::to_string(latents.size()) + " and " +
                         std::to_string(times.size()));
    int batch = -1;
    for (size_t m = 0; m < specs.size(); ++m) {
        const auto& sh = latents[m].shape();
        if (sh.size() != 2 || sh[1] != specs[m].sample_size())
            throw UsageError("forward: modality '" + specs[m].name + "' latent " + shape_str(sh) +
                             " != [batch," + std::to_string(specs[m].sample_size()) + "]");
        if (batch < 0) batch = sh[0];
        if (sh[0] != batch)
            throw UsageError("forward: modality '" + specs[m].name + "' batch " +
                             std::to_string(sh[0]) + " != " + std::to_string(batch));
        if (!(times[m] >= 0.0 && times[m] <= 1.0))
            throw UsageError("forward: time " + std::to_string(times[m]) + " outside [0,1]");
    }
}

namespace {

Tensor init_normal(std::vector<int> shape, double std_dev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (auto& x : t.data()) x = static_cast<float>(rng.normal() * std_dev);
    return t;
}

Tensor init_zeros(std::vector<int> shape) { return Tensor::zeros(std::move(shape), true); }

// constant [batch, n*time_dim] feature block, one sinusoidal slot per modality
Tensor time_feature_block(const std::vector<double>& times, int time_dim, int batch) {
    const int n = static_cast<int>(times.size());
    std::vector<float> row;
    row.reserve(static_cast<size_t>(n) * time_dim);
    for (double t : times) {
        auto e = sinusoidal_time_embed(t, time_dim);
        row.insert(row.end(), e.begin(), e.end());
    }
    std::vector<float> block(static_cast<size_t>(batch) * row.size());
    for (int i = 0; i < batch; ++i)
        std::memcpy(block.data() + static_cast<size_t>(i) * row.size(), row.data(),
                    row.size() * sizeof(float));
    return Tensor::from_data({batch, n * time_dim}, std::move(block));
}

// x_hat * (1 + scale) + shift with scale/shift broadcast over rows
Tensor modulate(const Tensor& x_hat, const Tensor& scale_vec, const Tensor& shift_vec,
                const Tensor& ones) {
    return add(mul(x_hat, add(scale_vec, ones)), shift_vec);
}

}  // namespace

// ----------------------------------------------------------------------------

MlpVelocityNet::MlpVelocityNet(std::vector<ModalitySpec> specs, MlpConfig cfg, uint64_t seed)
    : specs_(std::move(specs)), cfg_(cfg) {
    validate_modalities(specs_);
    if (cfg_.width < 1 || cfg_.depth < 1) throw UsageError("mlp: width and depth must be positive");
    Rng rng(seed);
    int in_dim = static_cast<int>(specs_.size()) * cfg_.time_dim;
    for (const auto& s : specs_) in_dim += s.sample_size();
    for (int k = 0; k < cfg_.depth; ++k) {
        int fan_in = k == 0 ? in_dim : cfg_.width;
        params_.emplace_back("layers." + std::to_string(k) + ".w",
                             init_normal({fan_in, cfg_.width}, std::sqrt(2.0 / fan_in), rng));
        params_.emplace_back("layers." + std::to_string(k) + ".b", init_zeros({cfg_.width}));
    }
    for (const auto& s : specs_) {
        params_.emplace_back("head." + s.name + ".w",
                             init_normal({cfg_.width, s.sample_size()},
                                         std::sqrt(2.0 / cfg_.width), rng));
        params_.emplace_back("head." + s.name + ".b", init_zeros({s.sample_size()}));
    }
}

std::vector<Tensor> MlpVelocityNet::forward(const std::vector<Tensor>& latents,
                                            const std::vector<double>& times) {
    check_inputs(latents, times);
    const int batch = latents[0].shape()[0];
    std::vector<Tensor> parts = latents;
    parts.push_back(time_feature_block(times, cfg_.time_dim, batch));
    Tensor x = concat_cols(parts);
    for (int k = 0; k < cfg_.depth; ++k) {
        const std::string base = "layers." + std::to_string(k) + ".";
        x = silu(add(matmul(x, param(base + "w")), param(base + "b")));
    }
    std::vector<Tensor> outs;
    outs.reserve(specs_.size());
    for (const auto& s : specs_)
        outs.push_back(add(matmul(x, param("head." + s.name + ".w")),
                           param("head." + s.name + ".b")));
    return outs;
}

// ----------------------------------------------------------------------------

OmniTransformer::OmniTransformer(std::vector<ModalitySpec> specs, OmniConfig cfg, uint64_t seed)
    : specs_(std::move(specs)), cfg_(cfg) {
    validate_modalities(specs_);
    if (cfg_.blocks < 1 || cfg_.width < 1 || cfg_.ffn_mult < 1)
        throw UsageError("omni: blocks, width, ffn_mult must be positive");
    Rng rng(seed);
    const int w = cfg_.width;
    const double ps = 0.02;

    for (const auto& s : specs_) {
        params_.emplace_back("embed." + s.name + ".w", init_normal({s.dim, w}, ps, rng));
        params_.emplace_back("embed." + s.name + ".b", init_zeros({w}));
    }
    for (const auto& s : specs_)
        params_.emplace_back("time.in." + s.name + ".w",
                             init_normal({cfg_.time_dim, w}, ps, rng));
    params_.emplace_back("time.b1", init_zeros({w}));
    params_.emplace_back("time.fc2.w", init_normal({w, w}, ps, rng));
    params_.emplace_back("time.fc2.b", init_zeros({w}));

    for (int k = 0; k < cfg_.blocks; ++k) {
        for (const auto& s : specs_) {
            const std::string base = "blocks." + std::to_string(k) + "." + s.name + ".";
            for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.o"})
                params_.emplace_back(base + proj, init_normal({w, w}, ps, rng));
            params_.emplace_back(base + "ffn.fc1.w",
                                 init_normal({w, cfg_.ffn_mult * w}, ps, rng));
            params_.emplace_back(base + "ffn.fc1.b", init_zeros({cfg_.ffn_mult * w}));
            params_.emplace_back(base + "ffn.fc2.w",
                                 init_normal({cfg_.ffn_mult * w, w}, ps, rng));
            params_.emplace_back(base + "ffn.fc2.b", init_zeros({w}));
            params_.emplace_back(base + "mod.w", init_zeros({w, 6 * w}));
            params_.emplace_back(base + "mod.b", init_zeros({6 * w}));
        }
    }
    for (const auto& s : specs_) {
        params_.emplace_back("final." + s.name + ".mod.w", init_zeros({w, 2 * w}));
        params_.emplace_back("final." + s.name + ".mod.b", init_zeros({2 * w}));
        params_.emplace_back("out." + s.name + ".w", init_normal({w, s.dim}, ps, rng));
        params_.emplace_back("out." + s.name + ".b", init_zeros({s.dim}));
    }

    ln_gain_ = Tensor::full({w}, 1.0f);
    ln_bias_ = Tensor::zeros({w});
    ones_ = Tensor::full({w}, 1.0f);
}

Tensor OmniTransformer::unified_time_embed(const std::vector<double>& times) const {
    Tensor acc;
    for (size_t m = 0; m < specs_.size(); ++m) {
        Tensor emb = Tensor::from_data({1, cfg_.time_dim},
                                       sinusoidal_time_embed(times[m], cfg_.time_dim));
        Tensor term = matmul(emb, param("time.in." + specs_[m].name + ".w"));
        acc = m == 0 ? term : add(acc, term);
    }
    Tensor hidden = silu(add(acc, param("time.b1")));
    return add(matmul(hidden, param("time.fc2.w")), param("time.fc2.b"));
}

std::vector<Tensor> OmniTransformer::forward(const std::vector<Tensor>& latents,
                                             const std::vector<double>& times) {
    check_inputs(latents, times);
    const int n = static_cast<int>(specs_.size());
    const int batch = latents[0].shape()[0];
    const int w = cfg_.width;

    Tensor y_act = silu(unified_time_embed(times));

    // token streams, sample-major rows
    std::vector<Tensor> h(static_cast<size_t>(n));
    std::vector<int> rows(static_cast<size_t>(n));
    int total_rows = 0;
    for (int m = 0; m < n; ++m) {
        const auto& s = specs_[static_cast<size_t>(m)];
        rows[static_cast<size_t>(m)] = batch * s.tokens;
        total_rows += rows[static_cast<size_t>(m)];
        Tensor tok = reshape(latents[static_cast<size_t>(m)],
                             {rows[static_cast<size_t>(m)], s.dim});
        h[static_cast<size_t>(m)] =
            add(matmul(tok, param("embed." + s.name + ".w")), param("embed." + s.name + ".b"));
    }

    // visibility masks keeping each sample's queries on its own keys
    std::vector<Tensor> masks(static_cast<size_t>(n));
    for (int m = 0; m < n; ++m) {
        const int rm = rows[static_cast<size_t>(m)];
        std::vector<float> mv(static_cast<size_t>(rm) * total_rows, -1e9f);
        for (int r = 0; r < rm; ++r) {
            const int sample = r / specs_[static_cast<size_t>(m)].tokens;
            int col = 0;
            for (int j = 0; j < n; ++j) {
                const int tj = specs_[static_cast<size_t>(j)].tokens;
                for (int tk = 0; tk < tj; ++tk)
                    mv[static_cast<size_t>(r) * total_rows + col + sample * tj + tk] = 0.0f;
                col += rows[static_cast<size_t>(j)];
            }
        }
        masks[static_cast<size_t>(m)] = Tensor::from_data({rm, total_rows}, std::move(mv));
    }

    for (int k = 0; k < cfg_.blocks; ++k) {
        std::vector<std::vector<Tensor>> mods(static_cast<size_t>(n));
        std::vector<Tensor> q(static_cast<size_t>(n)), ks(static_cast<size_t>(n)),
            vs(static_cast<size_t>(n));
        for (int m = 0; m < n; ++m) {
            const std::string base = "blocks." + std::to_string(k) + "." + specs_[m].name + ".";
            Tensor mo = add(matmul(y_act, param(base + "mod.w")), param(base + "mod.b"));
            auto& slots = mods[static_cast<size_t>(m)];
            for (int j = 0; j < 6; ++j) slots.push_back(reshape(slice_cols(mo, j * w, w), {w}));
            Tensor xh = modulate(layer_norm(h[m], ln_gain_, ln_bias_), slots[1], slots[0], ones_);
            q[static_cast<size_t>(m)] = matmul(xh, param(base + "attn.q"));
            ks[static_cast<size_t>(m)] = matmul(xh, param(base + "attn.k"));
            vs[static_cast<size_t>(m)] = matmul(xh, param(base + "attn.v"));
        }
        Tensor keys = concat_rows(ks), vals = concat_rows(vs);
        for (int m = 0; m < n; ++m) {
            const std::string base = "blocks." + std::to_string(k) + "." + specs_[m].name + ".";
            const auto& slots = mods[static_cast<size_t>(m)];
            Tensor att = joint_attention(q[static_cast<size_t>(m)], keys, vals,
                                         masks[static_cast<size_t>(m)]);
            h[m] = add(h[m], mul(matmul(att, param(base + "attn.o")), slots[2]));
            Tensor xh = modulate(layer_norm(h[m], ln_gain_, ln_bias_), slots[4], slots[3], ones_);
            Tensor f = add(matmul(silu(add(matmul(xh, param(base + "ffn.fc1.w")),
                                           param(base + "ffn.fc1.b"))),
                                  param(base + "ffn.fc2.w")),
                           param(base + "ffn.fc2.b"));
            h[m] = add(h[m], mul(f, slots[5]));
        }
    }

    std::vector<Tensor> outs(static_cast<size_t>(n));
    for (int m = 0; m < n; ++m) {
        const auto& s = specs_[static_cast<size_t>(m)];
        Tensor mo = add(matmul(y_act, param("final." + s.name + ".mod.w")),
                        param("final." + s.name + ".mod.b"));
        Tensor shift_vec = reshape(slice_cols(mo, 0, w), {w});
        Tensor scale_vec = reshape(slice_cols(mo, w, w), {w});
        Tensor xh = modulate(layer_norm(h[m], ln_gain_, ln_bias_), scale_vec, shift_vec, ones_);
        Tensor o = add(matmul(xh, param("out." + s.name + ".w")), param("out." + s.name + ".b"));
        outs[static_cast<size_t>(m)] = reshape(o, {batch, s.sample_size()});
    }
    return outs;
}

// ----------------------------------------------------------------------------

std::unique_ptr<OmniTransformer> merge_models(const OmniTransformer& a, const OmniTransformer& b,
                                              const std::string& shared_name) {
    modality_index(a.modalities(), shared_name);
    modality_index(b.modalities(), shared_name);
    const auto& ca = a.config();
    const auto& cb = b.config();
    if (ca.blocks != cb.blocks || ca.width != cb.width || ca.time_dim != cb.time_dim ||
        ca.ffn_mult != cb.ffn_mult)
        throw UsageError("merge: architecture hyperparameters differ");

    std::vector<ModalitySpec> specs = a.modalities();
    for (const auto& sb : b.modalities()) {
        bool found = false;
        for (const auto& sa : specs) {
            if (sa.name != sb.name) continue;
            if (sa.dim != sb.dim || sa.tokens != sb.tokens)
                throw UsageError("merge: modality '" + sb.name + "' shape differs");
            found = true;
        }
        if (!found) specs.push_back(sb);
    }

    std::map<std::string, Tensor> in_a, in_b;
    for (const auto& [name, p] : a.named_parameters()) in_a.emplace(name, p);
    for (const auto& [name, p] : b.named_parameters()) in_b.emplace(name, p);

    std::string offenders;
    for (const auto& [name, pa] : in_a) {
        auto it = in_b.find(name);
        if (it != in_b.end() && pa.shape() != it->second.shape())
            offenders += (offenders.empty() ? "" : ", ") + name + " " + shape_str(pa.shape()) +
                         " vs " + shape_str(it->second.shape());
    }
    if (!offenders.empty()) throw UsageError("merge: shape mismatch on " + offenders);

    auto merged = std::make_unique<OmniTransformer>(specs, ca, 0);
    for (const auto& [name, p] : merged->named_parameters()) {
        auto ia = in_a.find(name);
        auto ib = in_b.find(name);
        Tensor handle = p;
        auto& dst = handle.data();
        if (ia != in_a.end() && ib != in_b.end()) {
            const auto& va = ia->second.data();
            const auto& vb = ib->second.data();
            for (size_t i = 0; i < dst.size(); ++i) dst[i] = 0.5f * (va[i] + vb[i]);
        } else if (ia != in_a.end()) {
            dst = ia->second.data();
        } else if (ib != in_b.end()) {
            dst = ib->second.data();
        } else {
            throw UsageError("merge: parameter '" + name + "' missing from both models");
        }
    }
    return merged;
}

}  // namespace mmflow
