#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpp/ops.hpp"
#include "tpp/rng.hpp"
#include "tpp/tensor.hpp"

namespace tpp {

enum class NoiseMode { kTrainNoise, kNoNoise };

/// Mechanism switches for the ablation protocol. The default is the full
/// mechanism: adaptive temperature, reparameterized slicing, and a single
/// point representation shared by the slice-logit and state-value paths.
struct Variant {
    bool ada_temp = true;
    bool reparam = true;
    bool shared_value_proj = true;

    static Variant full() { return {true, true, true}; }
    static Variant baseline() { return {false, false, false}; }
    static Variant ada_temp_only() { return {true, false, false}; }
    static Variant ada_temp_shared() { return {true, false, true}; }

    bool operator==(const Variant&) const = default;
};

std::string variant_name(const Variant& v);
Variant variant_from_name(const std::string& name);

struct SliceConfig {
    std::int64_t slices = 8;     // M states per head
    std::int64_t heads = 1;      // H
    std::int64_t channels = 8;   // C, split evenly across heads
    double tau0 = 0.5;
    double tau_min = 0.1;
    double eps_denom = 1e-8;
    NoiseMode noise_mode = NoiseMode::kNoNoise;
    Variant variant;

    std::int64_t head_channels() const { return channels / heads; }
    void validate() const;
};

struct LinearParams {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
};

struct HeadParams {
    LinearParams slice_proj;  // C_h -> M
    LinearParams temp_proj;   // C_h -> 1
    LinearParams query;       // C_h -> C_h
    LinearParams key;
    LinearParams value;
    // Separate value representation, materialized only by the two-projection
    // ablation variants.
    std::optional<LinearParams> value_repr;
};

struct PhysicsAttentionParams {
    std::vector<HeadParams> heads;
    LinearParams out_proj;  // C -> C
};

/// Scalars materialized for per-head point representations, the quantity the
/// single- vs two-projection comparison counts.
struct ActivationStats {
    std::int64_t projection_scalars = 0;
};

LinearParams init_linear(std::int64_t in, std::int64_t out, Pcg& rng);
PhysicsAttentionParams init_attention_params(const SliceConfig& config, Pcg& rng);
void for_each_param(PhysicsAttentionParams& params,
                    const std::function<void(const std::string&, Tensor&)>& fn);

/// Pointwise learned temperature tau_i = max(tau0 + linear(x_i), tau_min).
/// The gradient flows through the linear branch except where the clamp is
/// active.
Tensor ada_temp(const Tensor& x_head, const LinearParams& temp_proj, double tau0, double tau_min);

/// Reparameterized slice weights. In train_noise mode the slice logits are
/// perturbed by -log(-log(eps)) with eps drawn per (layer, head, point,
/// slice); in no_noise mode eps is pinned at exp(-1), whose perturbation is
/// exactly zero, so the result is bit-identical to the temperature softmax
/// of the unperturbed logits.
Tensor rep_slice(const Tensor& x_head, const Tensor& tau, const LinearParams& slice_proj,
                 const NoiseSource& noise, NoiseMode mode, std::int64_t layer, std::int64_t head,
                 std::span<const std::int64_t> point_ids = {});

/// s_j = (sum_i w_ij v_i) / (sum_i w_ij + eps_denom). With point_ids given,
/// both sums accumulate in ascending-id order.
Tensor compute_eidetic_states(const Tensor& values, const Tensor& weights, double eps_denom,
                              std::span<const std::int64_t> point_ids = {});

/// Attention among the M states of one head: softmax(q k^T / sqrt(C_h)) v.
Tensor state_attention(const Tensor& states, const HeadParams& head);

/// x'_i = sum_j w_ij s'_j.
Tensor deslice(const Tensor& states_updated, const Tensor& weights);

struct AttentionResult {
    Tensor output;                      // [N x C]
    std::vector<Tensor> slice_weights;  // per head, [N x slices]
};

/// One full physics-attention layer: split channels across heads, slice,
/// attend among states, deslice, concatenate, project.
AttentionResult physics_attention_forward(const Tensor& x, const SliceConfig& config,
                                          const PhysicsAttentionParams& params, const NoiseSource& noise,
                                          std::int64_t layer_index = 0,
                                          std::span<const std::int64_t> point_ids = {},
                                          ActivationStats* stats = nullptr);

}  // namespace tpp
