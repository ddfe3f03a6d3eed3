#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mmflow/modality.hpp"
#include "mmflow/tensor.hpp"

namespace mmflow {

// [sin(f_k t'), ..., cos(f_k t'), ...] halves over log-spaced frequencies,
// t' = 1000 t, periods up to 10000
std::vector<float> sinusoidal_time_embed(double t, int dim);

// Scaled dot-product attention of one stream's queries over concatenated
// keys/values. The mask variant adds mask (0 visible, large negative hidden)
// to the score matrix before the row softmax, confining attention to each
// sample's own tokens in batched use.
Tensor joint_attention(const Tensor& q, const Tensor& k, const Tensor& v);
Tensor joint_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask);

// ----------------------------------------------------------------------------
// Networks regressing per-modality targets from the joint noisy state. Inputs
// are one [batch, tokens*dim] tensor per modality plus one scalar time per
// modality shared across the batch; outputs match the input shapes.

class VelocityModel {
  public:
    virtual ~VelocityModel() = default;
    virtual std::vector<Tensor> forward(const std::vector<Tensor>& latents,
                                        const std::vector<double>& times) = 0;
    virtual const std::vector<ModalitySpec>& modalities() const = 0;
    // stable construction order; the handles alias the model's own storage
    virtual const std::vector<std::pair<std::string, Tensor>>& named_parameters() const = 0;

    std::vector<Tensor> parameters() const;
    Tensor param(const std::string& name) const;
    size_t parameter_count() const;

  protected:
    void check_inputs(const std::vector<Tensor>& latents, const std::vector<double>& times) const;
};

struct MlpConfig {
    int width = 256;
    int depth = 8;
    int time_dim = 16;  // sinusoidal features per modality time
};

// Flat trunk: all modality latents and all time features concatenated, a
// stack of silu layers, then one linear head per modality.
class MlpVelocityNet : public VelocityModel {
  public:
    MlpVelocityNet(std::vector<ModalitySpec> specs, MlpConfig cfg, uint64_t seed);

    std::vector<Tensor> forward(const std::vector<Tensor>& latents,
                                const std::vector<double>& times) override;
    const std::vector<ModalitySpec>& modalities() const override { return specs_; }
    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const override {
        return params_;
    }
    const MlpConfig& config() const { return cfg_; }

  private:
    std::vector<ModalitySpec> specs_;
    MlpConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

struct OmniConfig {
    int blocks = 2;
    int width = 32;
    int time_dim = 16;
    int ffn_mult = 4;
};

// Per-modality token streams with modality-specific projections and FFNs,
// coupled only through joint attention over the concatenated keys/values.
// A shared trunk maps the per-modality times to one embedding that drives
// scale/shift/gate modulation of every stream (zero-initialized, so blocks
// start as identities).
class OmniTransformer : public VelocityModel {
  public:
    OmniTransformer(std::vector<ModalitySpec> specs, OmniConfig cfg, uint64_t seed);

    std::vector<Tensor> forward(const std::vector<Tensor>& latents,
                                const std::vector<double>& times) override;
    const std::vector<ModalitySpec>& modalities() const override { return specs_; }
    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const override {
        return params_;
    }
    const OmniConfig& config() const { return cfg_; }

  private:
    Tensor unified_time_embed(const std::vector<double>& times) const;

    std::vector<ModalitySpec> specs_;
    OmniConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    Tensor ln_gain_, ln_bias_, ones_;
};

// Averages every parameter name the two models share (shapes must agree;
// mismatches are reported together) and carries exclusive names over
// unchanged. Modality order: all of a's, then b's exclusives. shared_name
// must be a modality both models have.
std::unique_ptr<OmniTransformer> merge_models(const OmniTransformer& a, const OmniTransformer& b,
                                              const std::string& shared_name);

}  // namespace mmflow
