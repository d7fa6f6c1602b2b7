#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpp/dataio.hpp"
#include "tpp/model.hpp"
#include "tpp/tensor.hpp"

namespace tpp {

/// ||pred - truth||_2 / ||truth||_2 over the flattened field.
double relative_l2(std::span<const double> pred, std::span<const double> truth);
inline double relative_l2(const Tensor& pred, const Tensor& truth) {
    return relative_l2(pred.values(), truth.values());
}

/// 1 - sum (y_i - yhat_i)^2 / sum (y_i - ybar)^2. Needs >= 2 entries and a
/// non-constant truth.
double r_squared(std::span<const double> pred, std::span<const double> truth);

/// Discrete surface integral
///   (1 / (0.5 rho v_inf^2 ref_area)) * sum_i (-p_i n_i . dir + shear_i . dir) A_i.
/// shear rows are per-point traction vectors and default to zero when absent;
/// lift and drag are this one operation with different unit directions.
double aero_coefficient(const MeshSample& sample, std::span<const double> pressure,
                        std::span<const double> shear, const std::array<double, 3>& direction,
                        double rho = 1.0, double v_inf = 1.0, double ref_area = 1.0);

/// AdamW moments; one shared step counter, slots mirror the canonical
/// parameter order.
struct OptimState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::int64_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

OptimState init_optim_state(const std::vector<Tensor*>& params, double weight_decay);

/// Decoupled weight decay applied before the bias-corrected Adam update;
/// t increments once per call. Parameters without an accumulated gradient
/// are treated as zero-gradient (decay still applies).
void adamw_step(const std::vector<Tensor*>& params, OptimState& state, double lr_t);

enum class Schedule { kConstant, kCosine };

struct TrainConfig {
    std::int64_t epochs = 200;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    Schedule schedule = Schedule::kCosine;
    // First volume_channels target channels form the volume loss group; the
    // rest are surface. Zero means a single surface group.
    std::int64_t volume_channels = 0;
    double loss_weight_volume = 1.0;
    double loss_weight_surface = 1.0;
    std::int64_t batch_size = 1;
    std::int64_t rank_count = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

double schedule_lr(const TrainConfig& config, std::int64_t epoch);

struct EpochLog {
    std::int64_t epoch;
    double loss;
    double lr;
    double seconds;
};

/// CSV with header epoch,loss,lr,seconds.
std::string train_log_csv(const std::vector<EpochLog>& log);

/// Relative-L2 loss graph; the truth norm is a constant. Multiple loss
/// groups are summed with their weights.
Tensor relative_l2_loss(const Tensor& pred, const Tensor& truth, const TrainConfig& config);

struct TrainResult {
    std::vector<EpochLog> log;
};

/// Per-epoch: forward in train_noise mode, relative-L2 loss, backward,
/// AdamW step per batch. Parameters update in place; fixed seed gives a
/// reproducible loss curve.
TrainResult train(ModelParams& params, const ModelConfig& config,
                  const std::vector<NormalizedSample>& train_data, const TrainConfig& train_config);

struct CoefficientReport {
    std::vector<double> pred;
    std::vector<double> truth;
    double relative_l2 = 0.0;
    std::optional<double> r2;
};

struct MetricsReport {
    std::vector<double> relative_l2_per_field;  // mean over samples, de-normalized
    std::optional<CoefficientReport> drag;
    std::optional<CoefficientReport> lift;
};

/// Metric assembly from de-normalized predictions; the model path and the
/// truth-as-prediction stub share it.
MetricsReport evaluate_predictions(const std::vector<MeshSample>& samples,
                                   const std::vector<std::vector<double>>& predictions);

/// No-noise forward over the test split, de-normalization with the training
/// statistics, then metric assembly.
MetricsReport evaluate(const ModelParams& params, const ModelConfig& config,
                       const std::vector<MeshSample>& test_samples, const NormStats& stats);

std::string metrics_json(const MetricsReport& report);

}  // namespace tpp
