#include "tpp/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace tpp {

RankPartition partition_points(std::int64_t n, std::int64_t rank_count) {
    if (rank_count < 1) throw PartitionError("rank_count must be >= 1, got " + std::to_string(rank_count));
    if (n < rank_count) {
        throw PartitionError("cannot split " + std::to_string(n) + " points across " +
                             std::to_string(rank_count) + " ranks");
    }
    RankPartition partition;
    partition.total = n;
    const std::int64_t base = n / rank_count;
    const std::int64_t remainder = n % rank_count;
    std::int64_t begin = 0;
    for (std::int64_t k = 0; k < rank_count; ++k) {
        const std::int64_t size = base + (k < remainder ? 1 : 0);
        partition.ranges.emplace_back(begin, begin + size);
        begin += size;
    }
    return partition;
}

std::string comm_tag_name(CommTag tag) { return tag == CommTag::kStates ? "states" : "norms"; }

void CommLedger::record(std::int64_t layer, CommTag tag, std::int64_t scalars) {
    std::lock_guard<std::mutex> lock(mutex_);
    records_.push_back({layer, tag, scalars, scalars * 8});
}

void CommLedger::clear() {
    std::lock_guard<std::mutex> lock(mutex_);
    records_.clear();
}

std::vector<CommRecord> CommLedger::records() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return records_;
}

std::int64_t CommLedger::total_scalars() const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::int64_t total = 0;
    for (const CommRecord& r : records_) total += r.scalars;
    return total;
}

std::int64_t CommLedger::layer_scalars(std::int64_t layer) const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::int64_t total = 0;
    for (const CommRecord& r : records_) {
        if (r.layer == layer) total += r.scalars;
    }
    return total;
}

std::int64_t CommLedger::call_count() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return static_cast<std::int64_t>(records_.size());
}

Tensor all_reduce_sum(const std::vector<Tensor>& per_rank, Collective& collective, std::int64_t layer,
                      CommTag tag) {
    if (per_rank.empty()) throw CollectiveError("all_reduce_sum with no contributions");
    const Shape shape = per_rank[0].shape();
    for (const Tensor& t : per_rank) {
        if (t.shape() != shape) {
            throw CollectiveError("all_reduce_sum shape divergence: " + shape_str(shape) + " vs " +
                                  shape_str(t.shape()));
        }
    }
    Tensor acc = per_rank[0];
    for (std::size_t k = 1; k < per_rank.size(); ++k) acc = add(acc, per_rank[k]);
    collective.ledger().record(layer, tag, static_cast<std::int64_t>(per_rank.size()) * acc.numel());
    return acc;
}

std::vector<Tensor> parallel_physics_attention(
    const std::vector<Tensor>& x_parts, const SliceConfig& config, const PhysicsAttentionParams& params,
    const NoiseSource& noise, Collective& collective, std::int64_t layer_index,
    const std::vector<std::vector<std::int64_t>>& point_ids_per_rank) {
    config.validate();
    if (x_parts.empty()) throw PartitionError("parallel_physics_attention with no rank shards");
    const std::int64_t rank_count = static_cast<std::int64_t>(x_parts.size());
    const std::int64_t ch = config.head_channels();
    const std::int64_t m = config.slices;

    std::vector<std::vector<std::int64_t>> ids(x_parts.size());
    if (!point_ids_per_rank.empty()) {
        if (point_ids_per_rank.size() != x_parts.size()) {
            throw PartitionError("point id shard count does not match rank count");
        }
        ids = point_ids_per_rank;
    } else {
        std::int64_t offset = 0;
        for (std::size_t k = 0; k < x_parts.size(); ++k) {
            ids[k].resize(static_cast<std::size_t>(x_parts[k].dim(0)));
            std::iota(ids[k].begin(), ids[k].end(), offset);
            offset += x_parts[k].dim(0);
        }
    }

    // Per rank, per head: local temperatures, slice weights, and the two
    // partial sums Algorithm-style; heads stacked rowwise so each layer
    // issues exactly two collective calls.
    std::vector<std::vector<Tensor>> weights(x_parts.size());  // [rank][head]
    std::vector<Tensor> norm_parts, numer_parts;
    for (std::size_t k = 0; k < x_parts.size(); ++k) {
        const Tensor& x_k = x_parts[k];
        if (x_k.rank() != 2 || x_k.dim(1) != config.channels) {
            throw DimensionError("rank shard " + std::to_string(k) + " has shape " + shape_str(x_k.shape()) +
                                 ", expected [N_k x " + std::to_string(config.channels) + "]");
        }
        std::vector<Tensor> head_norms, head_numers;
        for (std::int64_t h = 0; h < config.heads; ++h) {
            const HeadParams& head = params.heads[static_cast<std::size_t>(h)];
            Tensor x_kh = slice_cols(x_k, h * ch, (h + 1) * ch);
            Tensor tau = config.variant.ada_temp ? ada_temp(x_kh, head.temp_proj, config.tau0, config.tau_min)
                                                 : Tensor::scalar(config.tau0);
            Tensor w;
            if (config.variant.reparam) {
                w = rep_slice(x_kh, tau, head.slice_proj, noise, config.noise_mode, layer_index, h, ids[k]);
            } else {
                w = softmax_temp(linear(x_kh, head.slice_proj.weight, head.slice_proj.bias), tau);
            }
            Tensor value_repr = x_kh;
            if (!config.variant.shared_value_proj) {
                value_repr = linear(x_kh, head.value_repr->weight, head.value_repr->bias);
            }
            head_norms.push_back(slice_weight_norms(w, ids[k]));
            head_numers.push_back(slice_states_numer(value_repr, w, ids[k]));
            weights[k].push_back(std::move(w));
        }
        norm_parts.push_back(config.heads == 1 ? head_norms[0] : concat_rows(head_norms));
        numer_parts.push_back(config.heads == 1 ? head_numers[0] : concat_rows(head_numers));
    }

    Tensor norms = all_reduce_sum(norm_parts, collective, layer_index, CommTag::kNorms);
    Tensor numers = all_reduce_sum(numer_parts, collective, layer_index, CommTag::kStates);

    // Replicated states; every rank would run the identical attention.
    std::vector<Tensor> states_updated;
    for (std::int64_t h = 0; h < config.heads; ++h) {
        Tensor numer_h = config.heads == 1 ? numers : slice_rows(numers, h * m, (h + 1) * m);
        Tensor norms_h = config.heads == 1 ? norms : slice_rows(norms, h * m, (h + 1) * m);
        Tensor s = div(numer_h, add_scalar(norms_h, config.eps_denom));
        states_updated.push_back(state_attention(s, params.heads[static_cast<std::size_t>(h)]));
    }

    std::vector<Tensor> outputs;
    outputs.reserve(x_parts.size());
    for (std::size_t k = 0; k < x_parts.size(); ++k) {
        std::vector<Tensor> head_outputs;
        for (std::int64_t h = 0; h < config.heads; ++h) {
            head_outputs.push_back(deslice(states_updated[static_cast<std::size_t>(h)],
                                           weights[k][static_cast<std::size_t>(h)]));
        }
        Tensor merged = config.heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
        outputs.push_back(linear(merged, params.out_proj.weight, params.out_proj.bias));
    }
    (void)rank_count;
    return outputs;
}

std::int64_t comm_scalars_per_layer(const SliceConfig& config, std::int64_t rank_count) {
    return rank_count * config.slices * (config.channels + config.heads);
}

std::vector<CommReportRow> comm_volume_report(const SliceConfig& config, std::int64_t rank_count,
                                              std::span<const std::int64_t> n_points_list) {
    const std::int64_t scalars = comm_scalars_per_layer(config, rank_count);
    std::vector<CommReportRow> rows;
    rows.reserve(n_points_list.size());
    for (std::int64_t n : n_points_list) {
        rows.push_back({n, rank_count, config.slices, config.channels, config.heads, scalars, scalars * 8});
    }
    return rows;
}

std::string comm_report_csv(const std::vector<CommReportRow>& rows) {
    std::string csv = "n_points,rank_count,M,C,H,scalars_per_layer,bytes_per_layer\n";
    char line[256];
    for (const CommReportRow& r : rows) {
        std::snprintf(line, sizeof(line), "%lld,%lld,%lld,%lld,%lld,%lld,%lld\n",
                      static_cast<long long>(r.n_points), static_cast<long long>(r.rank_count),
                      static_cast<long long>(r.slices), static_cast<long long>(r.channels),
                      static_cast<long long>(r.heads), static_cast<long long>(r.scalars_per_layer),
                      static_cast<long long>(r.bytes_per_layer));
        csv += line;
    }
    return csv;
}

namespace {

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double max_deviation(std::span<const double> got, std::span<const double> ref) {
    double dev = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) dev = std::max(dev, std::abs(got[i] - ref[i]));
    const double scale = max_abs(ref);
    return scale > 0.0 ? dev / scale : dev;
}

}  // namespace

ParallelCheckReport serial_parallel_check(const SliceConfig& config, std::int64_t n,
                                          std::span<const std::int64_t> rank_counts, std::uint64_t seed,
                                          bool check_gradients) {
    Pcg rng(seed);
    PhysicsAttentionParams params = init_attention_params(config, rng);
    std::vector<double> x_values(static_cast<std::size_t>(n * config.channels));
    for (double& v : x_values) v = rng.next_uniform(-1.0, 1.0);
    Tensor x = Tensor::from({n, config.channels}, x_values);
    NoiseSource noise(mix64(seed ^ 0x5eedull));

    std::vector<Tensor*> param_slots;
    for_each_param(params, [&](const std::string&, Tensor& t) { param_slots.push_back(&t); });
    auto zero_grads = [&] {
        for (Tensor* t : param_slots) t->zero_grad();
    };
    // Ablated variants leave some parameters outside the graph (e.g. the
    // temperature projection under fixed tau); treat their grads as zero.
    auto grad_of = [](const Tensor& t) {
        if (t.has_grad()) {
            auto g = t.grad();
            return std::vector<double>(g.begin(), g.end());
        }
        return std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0);
    };

    // Serial reference forward + gradients.
    AttentionResult serial = physics_attention_forward(x, config, params, noise);
    std::vector<std::vector<double>> serial_grads;
    if (check_gradients) {
        zero_grads();
        Tensor loss = sum(mul(serial.output, serial.output));
        loss.backward();
        for (Tensor* t : param_slots) serial_grads.push_back(grad_of(*t));
    }

    ParallelCheckReport report;
    for (std::int64_t ranks : rank_counts) {
        RankPartition partition = partition_points(n, ranks);
        std::vector<Tensor> parts;
        for (const auto& [begin, end] : partition.ranges) parts.push_back(slice_rows(x, begin, end));
        CommLedger ledger;
        Collective collective(ledger);
        if (check_gradients) zero_grads();
        std::vector<Tensor> out_parts =
            parallel_physics_attention(parts, config, params, noise, collective);
        Tensor out = out_parts.size() == 1 ? out_parts[0] : concat_rows(out_parts);

        ParallelCheckRow row;
        row.rank_count = ranks;
        row.forward_rel_dev = max_deviation(out.values(), serial.output.values());
        row.gradients_checked = check_gradients;
        if (check_gradients) {
            Tensor loss = sum(mul(out, out));
            loss.backward();
            double gdev = 0.0;
            for (std::size_t i = 0; i < param_slots.size(); ++i) {
                gdev = std::max(gdev, max_deviation(grad_of(*param_slots[i]), serial_grads[i]));
            }
            row.grad_rel_dev = gdev;
        }
        row.pass = row.forward_rel_dev <= 1e-10 && (!check_gradients || row.grad_rel_dev <= 1e-8);
        report.all_pass = report.all_pass && row.pass;
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace tpp
