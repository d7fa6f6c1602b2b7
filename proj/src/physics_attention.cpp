#include "tpp/physics_attention.hpp"

#include <cmath>

namespace tpp {

std::string variant_name(const Variant& v) {
    if (v == Variant::full()) return "full";
    if (v == Variant::baseline()) return "baseline";
    if (v == Variant::ada_temp_only()) return "ada_temp";
    if (v == Variant::ada_temp_shared()) return "ada_temp_shared_proj";
    std::string s = "custom";
    s += v.ada_temp ? "+ada_temp" : "";
    s += v.reparam ? "+reparam" : "";
    s += v.shared_value_proj ? "+shared_proj" : "";
    return s;
}

Variant variant_from_name(const std::string& name) {
    if (name == "full") return Variant::full();
    if (name == "baseline") return Variant::baseline();
    if (name == "ada_temp") return Variant::ada_temp_only();
    if (name == "ada_temp_shared_proj") return Variant::ada_temp_shared();
    throw ConfigError("unknown variant '" + name +
                      "' (expected full, baseline, ada_temp, ada_temp_shared_proj)");
}

void SliceConfig::validate() const {
    if (slices < 1) throw ConfigError("slices must be >= 1, got " + std::to_string(slices));
    if (heads < 1) throw ConfigError("heads must be >= 1, got " + std::to_string(heads));
    if (channels < 1) throw ConfigError("channels must be >= 1, got " + std::to_string(channels));
    if (channels % heads != 0) {
        throw ConfigError("channels (" + std::to_string(channels) + ") must be divisible by heads (" +
                          std::to_string(heads) + ")");
    }
    if (!(tau0 > 0.0)) throw ConfigError("tau0 must be positive, got " + std::to_string(tau0));
    if (!(tau_min > 0.0)) throw ConfigError("tau_min must be positive, got " + std::to_string(tau_min));
    if (!(eps_denom > 0.0)) throw ConfigError("eps_denom must be positive, got " + std::to_string(eps_denom));
}

LinearParams init_linear(std::int64_t in, std::int64_t out, Pcg& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(static_cast<std::size_t>(in * out));
    for (double& v : w) v = rng.next_uniform(-bound, bound);
    return LinearParams{Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

PhysicsAttentionParams init_attention_params(const SliceConfig& config, Pcg& rng) {
    config.validate();
    const std::int64_t ch = config.head_channels();
    PhysicsAttentionParams params;
    params.heads.resize(static_cast<std::size_t>(config.heads));
    for (auto& head : params.heads) {
        head.slice_proj = init_linear(ch, config.slices, rng);
        head.temp_proj = init_linear(ch, 1, rng);
        head.query = init_linear(ch, ch, rng);
        head.key = init_linear(ch, ch, rng);
        head.value = init_linear(ch, ch, rng);
        if (!config.variant.shared_value_proj) {
            head.value_repr = init_linear(ch, ch, rng);
        }
    }
    params.out_proj = init_linear(config.channels, config.channels, rng);
    return params;
}

void for_each_param(PhysicsAttentionParams& params,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
    for (std::size_t h = 0; h < params.heads.size(); ++h) {
        const std::string prefix = "head" + std::to_string(h) + ".";
        HeadParams& head = params.heads[h];
        auto both = [&](const std::string& name, LinearParams& lin) {
            fn(prefix + name + ".weight", lin.weight);
            fn(prefix + name + ".bias", lin.bias);
        };
        both("slice_proj", head.slice_proj);
        both("temp_proj", head.temp_proj);
        both("query", head.query);
        both("key", head.key);
        both("value", head.value);
        if (head.value_repr) both("value_repr", *head.value_repr);
    }
    fn("out_proj.weight", params.out_proj.weight);
    fn("out_proj.bias", params.out_proj.bias);
}

Tensor ada_temp(const Tensor& x_head, const LinearParams& temp_proj, double tau0, double tau_min) {
    return clamp_min(add_scalar(linear(x_head, temp_proj.weight, temp_proj.bias), tau0), tau_min);
}

Tensor rep_slice(const Tensor& x_head, const Tensor& tau, const LinearParams& slice_proj,
                 const NoiseSource& noise, NoiseMode mode, std::int64_t layer, std::int64_t head,
                 std::span<const std::int64_t> point_ids) {
    Tensor logits = linear(x_head, slice_proj.weight, slice_proj.bias);
    if (mode == NoiseMode::kNoNoise) {
        // eps pinned at exp(-1): log(-log eps) is exactly zero, so skipping
        // the perturbation term reproduces the plain temperature softmax
        // bit-for-bit.
        return softmax_temp(logits, tau);
    }
    const std::int64_t n = logits.dim(0);
    const std::int64_t m = logits.dim(1);
    std::vector<double> gumbel(static_cast<std::size_t>(n * m));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t pid = point_ids.empty() ? i : point_ids[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < m; ++j) {
            const double eps = noise.uniform(layer, head, pid, j);
            gumbel[static_cast<std::size_t>(i * m + j)] = std::log(-std::log(eps));
        }
    }
    Tensor perturbation = Tensor::from({n, m}, std::move(gumbel));
    return softmax_temp(sub(logits, perturbation), tau);
}

Tensor compute_eidetic_states(const Tensor& values, const Tensor& weights, double eps_denom,
                              std::span<const std::int64_t> point_ids) {
    Tensor numer = slice_states_numer(values, weights, point_ids);
    Tensor denom = add_scalar(slice_weight_norms(weights, point_ids), eps_denom);
    return div(numer, denom);
}

Tensor state_attention(const Tensor& states, const HeadParams& head) {
    const std::int64_t ch = states.dim(1);
    Tensor q = linear(states, head.query.weight, head.query.bias);
    Tensor k = linear(states, head.key.weight, head.key.bias);
    Tensor v = linear(states, head.value.weight, head.value.bias);
    Tensor scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(ch)));
    Tensor attn = softmax_temp(scores, Tensor::scalar(1.0));
    return matmul(attn, v);
}

Tensor deslice(const Tensor& states_updated, const Tensor& weights) {
    return matmul(weights, states_updated);
}

AttentionResult physics_attention_forward(const Tensor& x, const SliceConfig& config,
                                          const PhysicsAttentionParams& params, const NoiseSource& noise,
                                          std::int64_t layer_index, std::span<const std::int64_t> point_ids,
                                          ActivationStats* stats) {
    config.validate();
    if (x.rank() != 2 || x.dim(1) != config.channels) {
        throw DimensionError("physics_attention_forward expects [N x " + std::to_string(config.channels) +
                             "], got " + shape_str(x.shape()));
    }
    if (static_cast<std::int64_t>(params.heads.size()) != config.heads) {
        throw ConfigError("parameter head count " + std::to_string(params.heads.size()) +
                          " does not match config heads " + std::to_string(config.heads));
    }
    const std::int64_t n = x.dim(0);
    const std::int64_t ch = config.head_channels();
    AttentionResult result;
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(params.heads.size());
    for (std::int64_t h = 0; h < config.heads; ++h) {
        const HeadParams& head = params.heads[static_cast<std::size_t>(h)];
        Tensor x_h = slice_cols(x, h * ch, (h + 1) * ch);
        if (stats) stats->projection_scalars += n * ch;

        Tensor tau;
        if (config.variant.ada_temp) {
            tau = ada_temp(x_h, head.temp_proj, config.tau0, config.tau_min);
        } else {
            tau = Tensor::scalar(config.tau0);
        }

        Tensor w;
        if (config.variant.reparam) {
            w = rep_slice(x_h, tau, head.slice_proj, noise, config.noise_mode, layer_index, h, point_ids);
        } else {
            w = softmax_temp(linear(x_h, head.slice_proj.weight, head.slice_proj.bias), tau);
        }

        Tensor value_repr = x_h;
        if (!config.variant.shared_value_proj) {
            if (!head.value_repr) {
                throw ConfigError("variant requires a separate value projection but none was initialized");
            }
            value_repr = linear(x_h, head.value_repr->weight, head.value_repr->bias);
            if (stats) stats->projection_scalars += n * ch;
        }

        Tensor s = compute_eidetic_states(value_repr, w, config.eps_denom, point_ids);
        Tensor s_updated = state_attention(s, head);
        head_outputs.push_back(deslice(s_updated, w));
        result.slice_weights.push_back(std::move(w));
    }
    Tensor merged = config.heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    result.output = linear(merged, params.out_proj.weight, params.out_proj.bias);
    return result;
}

}  // namespace tpp
