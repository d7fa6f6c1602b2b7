#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tpp/parallel.hpp"
#include "tpp/physics_attention.hpp"
#include "tpp/tensor.hpp"

namespace tpp {

struct ModelConfig {
    std::int64_t layers = 2;     // L
    std::int64_t heads = 4;      // H
    std::int64_t channels = 32;  // C
    std::int64_t slices = 8;     // M per head
    std::int64_t d_in = 6;
    std::int64_t d_out = 1;
    double mlp_ratio = 2.0;
    double tau0 = 0.5;
    double tau_min = 0.1;
    double eps_denom = 1e-8;
    std::uint64_t seed = 0;
    Variant variant;

    std::int64_t ffn_hidden() const { return static_cast<std::int64_t>(mlp_ratio * static_cast<double>(channels) + 0.5); }
    SliceConfig slice_config(NoiseMode mode) const;
    void validate() const;
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
};

struct BlockParams {
    LayerNormParams norm_attn;
    PhysicsAttentionParams attention;
    LayerNormParams norm_ffn;
    LinearParams ffn_in;   // C -> hidden
    LinearParams ffn_out;  // hidden -> C
};

struct ModelParams {
    LinearParams embed_in;      // d_in -> C
    LinearParams embed_hidden;  // C -> C
    std::vector<BlockParams> blocks;
    LinearParams head;  // C -> d_out
};

/// Seeded initialization: weights uniform in +-1/sqrt(fan_in), biases zero,
/// layer-norm gains one. Same seed, bit-identical parameters.
ModelParams init_params(const ModelConfig& config);

std::int64_t param_count(const ModelConfig& config);

/// Canonical parameter order: embedding, blocks in depth order (norms,
/// attention heads, feedforward), output head. This order defines the
/// checkpoint array layout and the optimizer slot order.
void for_each_param(ModelParams& params, const std::function<void(const std::string&, Tensor&)>& fn);

struct ForwardOptions {
    NoiseMode mode = NoiseMode::kNoNoise;
    std::uint64_t noise_seed = 0;
    bool collect_slice_weights = false;
    std::int64_t rank_count = 1;       // > 1 runs the sharded physics-attention path
    Collective* collective = nullptr;  // optional ledger target for the sharded path
    ActivationStats* stats = nullptr;
};

struct ForwardResult {
    Tensor output;                                   // [N x d_out]
    std::vector<std::vector<Tensor>> slice_weights;  // [layer][head], when collected
};

/// embed -> L x [x + attn(norm(x)); x + ffn(norm(x))] -> head.
ForwardResult model_forward(const ModelParams& params, const ModelConfig& config, const Tensor& features,
                            const ForwardOptions& options = {});

/// Per-layer, per-head slice weights of a deterministic no-noise forward.
std::vector<std::vector<Tensor>> collect_slice_weights(const ModelParams& params, const ModelConfig& config,
                                                       const Tensor& features);

// Checkpoint container: magic "TPPC", format version, config fields, then
// every parameter array in canonical order as little-endian doubles.
void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams& params);

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace tpp
