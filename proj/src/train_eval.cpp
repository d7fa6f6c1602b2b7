#include "tpp/train_eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "tpp/ops.hpp"
#include "tpp/rng.hpp"

namespace tpp {

double relative_l2(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw DimensionError("relative_l2 size mismatch: " + std::to_string(pred.size()) + " vs " +
                             std::to_string(truth.size()));
    }
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = pred[i] - truth[i];
        num += d * d;
        den += truth[i] * truth[i];
    }
    if (!(den > 0.0)) throw DomainError("relative_l2 requires a truth field with positive norm");
    return std::sqrt(num) / std::sqrt(den);
}

double r_squared(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw DimensionError("r_squared size mismatch: " + std::to_string(pred.size()) + " vs " +
                             std::to_string(truth.size()));
    }
    if (truth.size() < 2) throw DomainError("r_squared needs at least two entries");
    double mean = 0.0;
    for (double y : truth) mean += y;
    mean /= static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (!(ss_tot > 0.0)) throw DomainError("r_squared is undefined for constant truth");
    return 1.0 - ss_res / ss_tot;
}

double aero_coefficient(const MeshSample& sample, std::span<const double> pressure,
                        std::span<const double> shear, const std::array<double, 3>& direction,
                        double rho, double v_inf, double ref_area) {
    if (!sample.has_normals() || !sample.has_areas()) {
        throw ValidationError("aero_coefficient requires per-point normals and areas");
    }
    if (static_cast<std::int64_t>(pressure.size()) != sample.n) {
        throw DimensionError("pressure length " + std::to_string(pressure.size()) + " != n=" +
                             std::to_string(sample.n));
    }
    if (!shear.empty() && static_cast<std::int64_t>(shear.size()) != sample.n * 3) {
        throw DimensionError("shear length " + std::to_string(shear.size()) + " != 3n");
    }
    const double dir_norm = std::sqrt(direction[0] * direction[0] + direction[1] * direction[1] +
                                      direction[2] * direction[2]);
    if (std::abs(dir_norm - 1.0) > 1e-9) {
        throw ValidationError("direction must be a unit vector, got length " + std::to_string(dir_norm));
    }
    double force = 0.0;
    for (std::int64_t i = 0; i < sample.n; ++i) {
        const double* nrm = sample.normals.data() + i * 3;
        const double n_dot_d = nrm[0] * direction[0] + nrm[1] * direction[1] + nrm[2] * direction[2];
        double term = -pressure[i] * n_dot_d;
        if (!shear.empty()) {
            const double* tau = shear.data() + i * 3;
            term += tau[0] * direction[0] + tau[1] * direction[1] + tau[2] * direction[2];
        }
        force += term * sample.areas[i];
    }
    return force / (0.5 * rho * v_inf * v_inf * ref_area);
}

OptimState init_optim_state(const std::vector<Tensor*>& params, double weight_decay) {
    OptimState state;
    state.weight_decay = weight_decay;
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const Tensor* p : params) {
        state.m.emplace_back(static_cast<std::size_t>(p->numel()), 0.0);
        state.v.emplace_back(static_cast<std::size_t>(p->numel()), 0.0);
    }
    return state;
}

void adamw_step(const std::vector<Tensor*>& params, OptimState& state, double lr_t) {
    if (params.size() != state.m.size()) {
        throw ContractError("optimizer state holds " + std::to_string(state.m.size()) +
                            " slots for " + std::to_string(params.size()) + " parameters");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        auto theta = p.values_mut();
        if (state.m[k].size() != theta.size()) {
            throw ContractError("optimizer slot " + std::to_string(k) + " shape mismatch: " +
                                std::to_string(state.m[k].size()) + " vs " + std::to_string(theta.size()));
        }
        const bool has_grad = p.has_grad();
        std::span<const double> g;
        if (has_grad) g = p.grad();
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = has_grad ? g[i] : 0.0;
            theta[i] -= lr_t * state.weight_decay * theta[i];
            state.m[k][i] = state.beta1 * state.m[k][i] + (1.0 - state.beta1) * gi;
            state.v[k][i] = state.beta2 * state.v[k][i] + (1.0 - state.beta2) * gi * gi;
            const double m_hat = state.m[k][i] / bc1;
            const double v_hat = state.v[k][i] / bc2;
            theta[i] -= lr_t * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
    if (!(lr > 0.0)) throw ConfigError("lr must be positive, got " + std::to_string(lr));
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1, got " + std::to_string(batch_size));
    if (rank_count < 1) throw ConfigError("rank_count must be >= 1, got " + std::to_string(rank_count));
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (volume_channels < 0) throw ConfigError("volume_channels must be >= 0");
}

double schedule_lr(const TrainConfig& config, std::int64_t epoch) {
    if (config.schedule == Schedule::kConstant) return config.lr;
    const double progress = static_cast<double>(epoch) / static_cast<double>(config.epochs);
    return config.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
    std::string csv = "epoch,loss,lr,seconds\n";
    char line[160];
    for (const EpochLog& e : log) {
        std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.3f\n", static_cast<long long>(e.epoch), e.loss,
                      e.lr, e.seconds);
        csv += line;
    }
    return csv;
}

namespace {

double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

Tensor group_loss(const Tensor& pred, const Tensor& truth, std::int64_t col_begin, std::int64_t col_end,
                  double weight) {
    Tensor p = (col_begin == 0 && col_end == pred.dim(1)) ? pred : slice_cols(pred, col_begin, col_end);
    Tensor t = (col_begin == 0 && col_end == truth.dim(1)) ? truth : slice_cols(truth, col_begin, col_end);
    const double denom = l2_norm(t.values());
    if (!(denom > 0.0)) throw DomainError("loss group has zero-norm truth");
    Tensor diff = sub(p, t);
    Tensor loss = sqrt(sum(mul(diff, diff)));
    return mul_scalar(loss, weight / denom);
}

}  // namespace

Tensor relative_l2_loss(const Tensor& pred, const Tensor& truth, const TrainConfig& config) {
    if (pred.shape() != truth.shape()) {
        throw DimensionError("loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                             shape_str(truth.shape()));
    }
    const std::int64_t d_out = pred.dim(1);
    const std::int64_t split = std::min(config.volume_channels, d_out);
    if (split == 0) {
        return group_loss(pred, truth, 0, d_out, config.loss_weight_surface);
    }
    Tensor volume = group_loss(pred, truth, 0, split, config.loss_weight_volume);
    if (split == d_out) return volume;
    return add(volume, group_loss(pred, truth, split, d_out, config.loss_weight_surface));
}

namespace {

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

[[noreturn]] void abort_non_finite(ModelParams& params, const Tensor& pred, std::int64_t epoch,
                                   std::size_t sample_index) {
    std::string culprit = "loss";
    for_each_param(params, [&](const std::string& name, Tensor& t) {
        if (culprit == "loss" && !all_finite(t.values())) culprit = "parameter " + name;
    });
    if (culprit == "loss" && !all_finite(pred.values())) {
        culprit = "model output for sample " + std::to_string(sample_index);
    }
    throw Error("non-finite loss at epoch " + std::to_string(epoch) + "; first non-finite tensor: " + culprit);
}

}  // namespace

TrainResult train(ModelParams& params, const ModelConfig& config,
                  const std::vector<NormalizedSample>& train_data, const TrainConfig& train_config) {
    train_config.validate();
    config.validate();
    if (train_data.empty()) throw ValidationError("training split is empty");

    std::vector<Tensor*> slots;
    for_each_param(params, [&](const std::string&, Tensor& t) { slots.push_back(&t); });
    OptimState state = init_optim_state(slots, train_config.weight_decay);

    CommLedger ledger;
    Collective collective(ledger);

    TrainResult result;
    const std::int64_t n_samples = static_cast<std::int64_t>(train_data.size());
    for (std::int64_t epoch = 0; epoch < train_config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr_t = schedule_lr(train_config, epoch);
        double epoch_loss = 0.0;
        std::int64_t cursor = 0;
        while (cursor < n_samples) {
            const std::int64_t batch_end = std::min(cursor + train_config.batch_size, n_samples);
            const double inv_batch = 1.0 / static_cast<double>(batch_end - cursor);
            for (Tensor* t : slots) t->zero_grad();
            for (std::int64_t s = cursor; s < batch_end; ++s) {
                const NormalizedSample& sample = train_data[static_cast<std::size_t>(s)];
                ForwardOptions options;
                options.mode = NoiseMode::kTrainNoise;
                options.noise_seed = mix_key(train_config.seed, static_cast<std::uint64_t>(epoch),
                                             static_cast<std::uint64_t>(s));
                options.rank_count = train_config.rank_count;
                options.collective = &collective;
                ForwardResult forward = model_forward(params, config, sample.features, options);
                Tensor loss = relative_l2_loss(forward.output, sample.targets, train_config);
                const double loss_value = loss.scalar_value();
                if (!std::isfinite(loss_value)) {
                    abort_non_finite(params, forward.output, epoch, static_cast<std::size_t>(s));
                }
                epoch_loss += loss_value;
                mul_scalar(loss, inv_batch).backward();
            }
            adamw_step(slots, state, lr_t);
            cursor = batch_end;
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back({epoch, epoch_loss / static_cast<double>(n_samples), lr_t, seconds});
    }
    return result;
}

MetricsReport evaluate_predictions(const std::vector<MeshSample>& samples,
                                   const std::vector<std::vector<double>>& predictions) {
    if (samples.empty()) throw ValidationError("test split is empty");
    if (samples.size() != predictions.size()) {
        throw DimensionError("prediction count " + std::to_string(predictions.size()) +
                             " != sample count " + std::to_string(samples.size()));
    }
    const std::int64_t d_out = samples.front().d_out;
    MetricsReport report;
    report.relative_l2_per_field.assign(static_cast<std::size_t>(d_out), 0.0);
    std::vector<double> pred_channel, truth_channel;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const MeshSample& sample = samples[s];
        const std::vector<double>& pred = predictions[s];
        if (static_cast<std::int64_t>(pred.size()) != sample.n * d_out) {
            throw DimensionError("prediction " + std::to_string(s) + " has wrong length");
        }
        for (std::int64_t c = 0; c < d_out; ++c) {
            pred_channel.resize(static_cast<std::size_t>(sample.n));
            truth_channel.resize(static_cast<std::size_t>(sample.n));
            for (std::int64_t i = 0; i < sample.n; ++i) {
                pred_channel[static_cast<std::size_t>(i)] = pred[i * d_out + c];
                truth_channel[static_cast<std::size_t>(i)] = sample.targets[i * d_out + c];
            }
            report.relative_l2_per_field[static_cast<std::size_t>(c)] +=
                relative_l2(pred_channel, truth_channel) / static_cast<double>(samples.size());
        }
    }

    // Coefficients from the first target channel (surface pressure) when the
    // geometry carries normals and areas.
    bool coefficients_possible = true;
    for (const MeshSample& sample : samples) {
        if (!sample.has_normals() || !sample.has_areas()) coefficients_possible = false;
    }
    if (coefficients_possible && samples.size() >= 2) {
        auto coefficient_report = [&](const std::array<double, 3>& direction) {
            CoefficientReport rep;
            for (std::size_t s = 0; s < samples.size(); ++s) {
                const MeshSample& sample = samples[s];
                std::vector<double> p_pred(static_cast<std::size_t>(sample.n));
                std::vector<double> p_truth(static_cast<std::size_t>(sample.n));
                for (std::int64_t i = 0; i < sample.n; ++i) {
                    p_pred[static_cast<std::size_t>(i)] = predictions[s][i * d_out];
                    p_truth[static_cast<std::size_t>(i)] = sample.targets[i * d_out];
                }
                rep.pred.push_back(aero_coefficient(sample, p_pred, {}, direction));
                rep.truth.push_back(aero_coefficient(sample, p_truth, {}, direction));
            }
            double truth_norm = l2_norm(rep.truth);
            if (truth_norm > 0.0) rep.relative_l2 = relative_l2(rep.pred, rep.truth);
            double mean = 0.0;
            for (double t : rep.truth) mean += t;
            mean /= static_cast<double>(rep.truth.size());
            double variance = 0.0;
            for (double t : rep.truth) variance += (t - mean) * (t - mean);
            if (variance > 0.0) rep.r2 = r_squared(rep.pred, rep.truth);
            return rep;
        };
        report.drag = coefficient_report(kFlowDirection);
        report.lift = coefficient_report(kLiftDirection);
    }
    return report;
}

MetricsReport evaluate(const ModelParams& params, const ModelConfig& config,
                       const std::vector<MeshSample>& test_samples, const NormStats& stats) {
    if (test_samples.empty()) throw ValidationError("test split is empty");
    NoGradGuard no_grad;
    std::vector<std::vector<double>> predictions;
    predictions.reserve(test_samples.size());
    const std::vector<NormalizedSample> normalized = normalize(test_samples, &stats).first;
    for (std::size_t s = 0; s < test_samples.size(); ++s) {
        ForwardOptions options;
        options.mode = NoiseMode::kNoNoise;
        ForwardResult forward = model_forward(params, config, normalized[s].features, options);
        predictions.push_back(denormalize_targets(forward.output.values(), config.d_out, stats));
    }
    return evaluate_predictions(test_samples, predictions);
}

std::string metrics_json(const MetricsReport& report) {
    nlohmann::json j;
    j["relative_l2_per_field"] = report.relative_l2_per_field;
    auto coeff_json = [](const CoefficientReport& rep) {
        nlohmann::json c;
        c["per_sample_pred"] = rep.pred;
        c["per_sample_truth"] = rep.truth;
        c["relative_l2"] = rep.relative_l2;
        if (rep.r2) c["r2"] = *rep.r2;
        return c;
    };
    if (report.drag) j["drag"] = coeff_json(*report.drag);
    if (report.lift) j["lift"] = coeff_json(*report.lift);
    return j.dump(2) + "\n";
}

}  // namespace tpp
