#pragma once

#include <cstdint>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tpp/physics_attention.hpp"
#include "tpp/tensor.hpp"

// Simulated multi-rank execution: ranks are execution contexts inside one
// process, the collective is a synchronization point with deterministic
// ascending-rank left-fold reduction, and the ledger accounts every payload
// the way real hardware would have to move it.
namespace tpp {

struct RankPartition {
    std::int64_t total = 0;
    std::vector<std::pair<std::int64_t, std::int64_t>> ranges;  // contiguous [begin, end) per rank

    std::int64_t rank_count() const { return static_cast<std::int64_t>(ranges.size()); }
    std::int64_t size(std::int64_t rank) const { return ranges[rank].second - ranges[rank].first; }
};

/// Near-equal contiguous split of [0, n); sizes differ by at most one.
RankPartition partition_points(std::int64_t n, std::int64_t rank_count);

enum class CommTag { kStates, kNorms };

std::string comm_tag_name(CommTag tag);

struct CommRecord {
    std::int64_t layer;
    CommTag tag;
    std::int64_t scalars;
    std::int64_t bytes;
};

/// Byte/scalar accounting of every collective call. Thread-safe; the only
/// shared mutable state of the simulated ranks.
class CommLedger {
  public:
    void record(std::int64_t layer, CommTag tag, std::int64_t scalars);
    void clear();
    std::vector<CommRecord> records() const;
    std::int64_t total_scalars() const;
    std::int64_t layer_scalars(std::int64_t layer) const;
    std::int64_t call_count() const;

  private:
    mutable std::mutex mutex_;
    std::vector<CommRecord> records_;
};

/// AllReduce provider with the fixed reduction order policy (ascending rank,
/// sequential pairwise left fold).
class Collective {
  public:
    explicit Collective(CommLedger& ledger) : ledger_(&ledger) {}
    CommLedger& ledger() { return *ledger_; }

  private:
    CommLedger* ledger_;
};

/// Elementwise sum over ranks, folded in ascending rank order; the result is
/// the single replicated tensor every rank holds. Records one ledger call
/// with payload rank_count x elements.
Tensor all_reduce_sum(const std::vector<Tensor>& per_rank, Collective& collective,
                      std::int64_t layer = 0, CommTag tag = CommTag::kStates);

/// Physics-attention over row-sharded inputs. Each rank computes local
/// temperatures, slice weights, and partial state sums; the two collective
/// calls per layer (norms then states) produce replicated eidetic states;
/// every rank attends among the same states and deslices its own rows.
/// point_ids_per_rank defaults to contiguous global ids in rank order.
std::vector<Tensor> parallel_physics_attention(
    const std::vector<Tensor>& x_parts, const SliceConfig& config, const PhysicsAttentionParams& params,
    const NoiseSource& noise, Collective& collective, std::int64_t layer_index = 0,
    const std::vector<std::vector<std::int64_t>>& point_ids_per_rank = {});

/// Communication payload of one physics-attention layer:
/// rank_count * slices * (channels + heads) scalars, independent of N.
std::int64_t comm_scalars_per_layer(const SliceConfig& config, std::int64_t rank_count);

struct CommReportRow {
    std::int64_t n_points;
    std::int64_t rank_count;
    std::int64_t slices;
    std::int64_t channels;
    std::int64_t heads;
    std::int64_t scalars_per_layer;
    std::int64_t bytes_per_layer;
};

std::vector<CommReportRow> comm_volume_report(const SliceConfig& config, std::int64_t rank_count,
                                              std::span<const std::int64_t> n_points_list);

/// CSV with header n_points,rank_count,M,C,H,scalars_per_layer,bytes_per_layer.
std::string comm_report_csv(const std::vector<CommReportRow>& rows);

struct ParallelCheckRow {
    std::int64_t rank_count = 0;
    double forward_rel_dev = 0.0;
    double grad_rel_dev = 0.0;
    bool gradients_checked = false;
    bool pass = false;
};

struct ParallelCheckReport {
    std::vector<ParallelCheckRow> rows;
    bool all_pass = true;
};

/// Runs one randomly initialized layer serially and at each requested rank
/// count on the same random input, reporting the max elementwise deviation
/// (normalized by the reference tensor's max magnitude). PASS thresholds:
/// 1e-10 forward, 1e-8 parameter gradients.
ParallelCheckReport serial_parallel_check(const SliceConfig& config, std::int64_t n,
                                          std::span<const std::int64_t> rank_counts, std::uint64_t seed = 0,
                                          bool check_gradients = true);

}  // namespace tpp
