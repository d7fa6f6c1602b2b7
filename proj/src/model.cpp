#include "tpp/model.hpp"

#include <cmath>

#include "tpp/binary_io.hpp"
#include "tpp/ops.hpp"

namespace tpp {

SliceConfig ModelConfig::slice_config(NoiseMode mode) const {
    SliceConfig cfg;
    cfg.slices = slices;
    cfg.heads = heads;
    cfg.channels = channels;
    cfg.tau0 = tau0;
    cfg.tau_min = tau_min;
    cfg.eps_denom = eps_denom;
    cfg.noise_mode = mode;
    cfg.variant = variant;
    return cfg;
}

void ModelConfig::validate() const {
    if (layers < 1) throw ConfigError("layers must be >= 1, got " + std::to_string(layers));
    if (d_in < 1) throw ConfigError("d_in must be >= 1, got " + std::to_string(d_in));
    if (d_out < 1) throw ConfigError("d_out must be >= 1, got " + std::to_string(d_out));
    if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive, got " + std::to_string(mlp_ratio));
    slice_config(NoiseMode::kNoNoise).validate();
}

namespace {

LayerNormParams init_layer_norm(std::int64_t width) {
    return LayerNormParams{Tensor::full({width}, 1.0, true), Tensor::zeros({width}, true)};
}

}  // namespace

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    Pcg rng(config.seed);
    ModelParams params;
    params.embed_in = init_linear(config.d_in, config.channels, rng);
    params.embed_hidden = init_linear(config.channels, config.channels, rng);
    const SliceConfig slice_cfg = config.slice_config(NoiseMode::kNoNoise);
    params.blocks.resize(static_cast<std::size_t>(config.layers));
    for (auto& block : params.blocks) {
        block.norm_attn = init_layer_norm(config.channels);
        block.attention = init_attention_params(slice_cfg, rng);
        block.norm_ffn = init_layer_norm(config.channels);
        block.ffn_in = init_linear(config.channels, config.ffn_hidden(), rng);
        block.ffn_out = init_linear(config.ffn_hidden(), config.channels, rng);
    }
    params.head = init_linear(config.channels, config.d_out, rng);
    return params;
}

void for_each_param(ModelParams& params, const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("embed_in.weight", params.embed_in.weight);
    fn("embed_in.bias", params.embed_in.bias);
    fn("embed_hidden.weight", params.embed_hidden.weight);
    fn("embed_hidden.bias", params.embed_hidden.bias);
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        const std::string prefix = "block" + std::to_string(l) + ".";
        BlockParams& block = params.blocks[l];
        fn(prefix + "norm_attn.gamma", block.norm_attn.gamma);
        fn(prefix + "norm_attn.beta", block.norm_attn.beta);
        for_each_param(block.attention, [&](const std::string& name, Tensor& t) { fn(prefix + "attn." + name, t); });
        fn(prefix + "norm_ffn.gamma", block.norm_ffn.gamma);
        fn(prefix + "norm_ffn.beta", block.norm_ffn.beta);
        fn(prefix + "ffn_in.weight", block.ffn_in.weight);
        fn(prefix + "ffn_in.bias", block.ffn_in.bias);
        fn(prefix + "ffn_out.weight", block.ffn_out.weight);
        fn(prefix + "ffn_out.bias", block.ffn_out.bias);
    }
    fn("head.weight", params.head.weight);
    fn("head.bias", params.head.bias);
}

std::int64_t param_count(const ModelConfig& config) {
    ModelParams params = init_params(config);
    std::int64_t count = 0;
    for_each_param(params, [&](const std::string&, Tensor& t) { count += t.numel(); });
    return count;
}

ForwardResult model_forward(const ModelParams& params, const ModelConfig& config, const Tensor& features,
                            const ForwardOptions& options) {
    config.validate();
    if (features.rank() != 2 || features.dim(1) != config.d_in) {
        throw DimensionError("model_forward expects features [N x " + std::to_string(config.d_in) +
                             "], got " + shape_str(features.shape()));
    }
    const std::int64_t n = features.dim(0);
    const SliceConfig slice_cfg = config.slice_config(options.mode);
    const NoiseSource noise(options.noise_seed);

    CommLedger scratch_ledger;
    Collective scratch_collective(scratch_ledger);
    Collective* collective = options.collective ? options.collective : &scratch_collective;

    RankPartition partition;
    if (options.rank_count > 1) partition = partition_points(n, options.rank_count);

    ForwardResult result;
    Tensor x = linear(features, params.embed_in.weight, params.embed_in.bias);
    x = gelu(x);
    x = linear(x, params.embed_hidden.weight, params.embed_hidden.bias);

    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        const BlockParams& block = params.blocks[l];
        Tensor normed = layer_norm(x, block.norm_attn.gamma, block.norm_attn.beta);
        Tensor attn_out;
        std::vector<Tensor> layer_weights;
        if (options.rank_count > 1) {
            std::vector<Tensor> parts;
            for (const auto& [begin, end] : partition.ranges) parts.push_back(slice_rows(normed, begin, end));
            std::vector<Tensor> out_parts = parallel_physics_attention(
                parts, slice_cfg, block.attention, noise, *collective, static_cast<std::int64_t>(l));
            attn_out = out_parts.size() == 1 ? out_parts[0] : concat_rows(out_parts);
        } else {
            AttentionResult attn = physics_attention_forward(normed, slice_cfg, block.attention, noise,
                                                             static_cast<std::int64_t>(l), {}, options.stats);
            attn_out = attn.output;
            layer_weights = std::move(attn.slice_weights);
        }
        x = add(x, attn_out);
        Tensor ffn_normed = layer_norm(x, block.norm_ffn.gamma, block.norm_ffn.beta);
        Tensor hidden = gelu(linear(ffn_normed, block.ffn_in.weight, block.ffn_in.bias));
        x = add(x, linear(hidden, block.ffn_out.weight, block.ffn_out.bias));
        if (options.collect_slice_weights) result.slice_weights.push_back(std::move(layer_weights));
    }
    result.output = linear(x, params.head.weight, params.head.bias);
    return result;
}

std::vector<std::vector<Tensor>> collect_slice_weights(const ModelParams& params, const ModelConfig& config,
                                                       const Tensor& features) {
    ForwardOptions options;
    options.mode = NoiseMode::kNoNoise;
    options.collect_slice_weights = true;
    return model_forward(params, config, features, options).slice_weights;
}

namespace {

constexpr char kCheckpointMagic[4] = {'T', 'P', 'P', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint32_t variant_flags(const Variant& v) {
    return (v.ada_temp ? 1u : 0u) | (v.reparam ? 2u : 0u) | (v.shared_value_proj ? 4u : 0u);
}

Variant variant_from_flags(std::uint32_t flags) {
    Variant v;
    v.ada_temp = (flags & 1u) != 0;
    v.reparam = (flags & 2u) != 0;
    v.shared_value_proj = (flags & 4u) != 0;
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams& params) {
    io::Writer w(path);
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(config.layers));
    w.u32(static_cast<std::uint32_t>(config.heads));
    w.u32(static_cast<std::uint32_t>(config.channels));
    w.u32(static_cast<std::uint32_t>(config.slices));
    w.u32(static_cast<std::uint32_t>(config.d_in));
    w.u32(static_cast<std::uint32_t>(config.d_out));
    w.u32(variant_flags(config.variant));
    w.f64(config.mlp_ratio);
    w.f64(config.tau0);
    w.f64(config.tau_min);
    w.f64(config.eps_denom);
    w.u64(config.seed);
    for_each_param(const_cast<ModelParams&>(params), [&](const std::string&, Tensor& t) {
        auto v = t.values();
        w.f64_array(v.data(), v.size());
    });
    w.finish(path);
}

Checkpoint load_checkpoint(const std::string& path) {
    io::Reader r(path, kCheckpointMagic);
    const std::uint32_t version = r.u32("format version");
    if (version != kCheckpointVersion) {
        throw FormatError("'" + path + "': unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig config;
    config.layers = r.u32("layers");
    config.heads = r.u32("heads");
    config.channels = r.u32("channels");
    config.slices = r.u32("slices");
    config.d_in = r.u32("d_in");
    config.d_out = r.u32("d_out");
    config.variant = variant_from_flags(r.u32("variant flags"));
    config.mlp_ratio = r.f64("mlp_ratio");
    config.tau0 = r.f64("tau0");
    config.tau_min = r.f64("tau_min");
    config.eps_denom = r.f64("eps_denom");
    config.seed = r.u64("seed");
    config.validate();
    Checkpoint ckpt{config, init_params(config)};
    for_each_param(ckpt.params, [&](const std::string& name, Tensor& t) {
        std::vector<double> values = r.f64_array(static_cast<std::size_t>(t.numel()), name.c_str());
        auto dst = t.values_mut();
        std::copy(values.begin(), values.end(), dst.begin());
    });
    r.expect_eof("parameter arrays");
    return ckpt;
}

}  // namespace tpp
