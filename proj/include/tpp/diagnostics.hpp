#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tpp/dataio.hpp"
#include "tpp/model.hpp"
#include "tpp/train_eval.hpp"

namespace tpp {

/// Mean over rows of KL(w_i || Uniform(M)) = sum_j w_ij log(w_ij M), with
/// 0 log 0 := 0. Rows must be distributions: nonnegative, summing to 1
/// within 1e-9. Ranges over [0, log M].
double kl_uniform(const Tensor& w);

struct KLReport {
    std::vector<std::int64_t> layer_indices;
    std::vector<std::vector<double>> kl_mean;  // [reported layer][head]
    double aggregate_mean = 0.0;
};

/// Slice-weight diversity of a deterministic forward, averaged over the
/// given samples. layer_subset empty means all layers.
KLReport diagnose_kl(const ModelParams& params, const ModelConfig& config,
                     const std::vector<NormalizedSample>& samples,
                     std::span<const std::int64_t> layer_subset = {});

/// CSV with header layer,head,kl_mean.
std::string kl_report_csv(const KLReport& report);

struct AblationRow {
    std::string variant;
    double relative_l2 = 0.0;
    double final_loss = 0.0;
};

/// Trains the four mechanism variants (baseline, ada_temp,
/// ada_temp_shared_proj, full) from the same seed on the same data and
/// reports their test relative L2.
std::vector<AblationRow> ablation_matrix(const ModelConfig& base_config, const TrainConfig& train_config,
                                         const std::vector<MeshSample>& train_samples,
                                         const std::vector<MeshSample>& test_samples);

/// CSV with header variant,relative_l2,final_loss.
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Compact runtime invariant suite backing the selftest subcommand; prints
/// one line per check. Returns the number of failed checks.
int run_selftest(std::ostream& out, const std::string& scratch_dir);

}  // namespace tpp
