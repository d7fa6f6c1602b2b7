#include "tpp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "tpp/ops.hpp"
#include "tpp/parallel.hpp"
#include "tpp/rng.hpp"

namespace tpp {

double kl_uniform(const Tensor& w) {
    if (w.rank() != 2) throw DimensionError("kl_uniform expects [N x M], got " + shape_str(w.shape()));
    const std::int64_t n = w.dim(0), m = w.dim(1);
    auto values = w.values();
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = values.data() + i * m;
        double row_sum = 0.0;
        for (std::int64_t j = 0; j < m; ++j) {
            if (row[j] < 0.0) {
                throw ValidationError("kl_uniform row " + std::to_string(i) + " has negative weight " +
                                      std::to_string(row[j]));
            }
            row_sum += row[j];
        }
        if (std::abs(row_sum - 1.0) > 1e-9) {
            throw ValidationError("kl_uniform row " + std::to_string(i) + " sums to " +
                                  std::to_string(row_sum) + ", expected 1");
        }
        double kl = 0.0;
        for (std::int64_t j = 0; j < m; ++j) {
            if (row[j] > 0.0) kl += row[j] * std::log(row[j] * static_cast<double>(m));
        }
        total += kl;
    }
    // Rounding can leave a tiny negative mean for near-uniform rows.
    return std::max(total / static_cast<double>(n), 0.0);
}

KLReport diagnose_kl(const ModelParams& params, const ModelConfig& config,
                     const std::vector<NormalizedSample>& samples,
                     std::span<const std::int64_t> layer_subset) {
    if (samples.empty()) throw ValidationError("diagnose_kl needs at least one sample");
    NoGradGuard no_grad;
    std::vector<std::int64_t> layers(layer_subset.begin(), layer_subset.end());
    if (layers.empty()) {
        layers.resize(static_cast<std::size_t>(config.layers));
        for (std::size_t l = 0; l < layers.size(); ++l) layers[l] = static_cast<std::int64_t>(l);
    }
    for (std::int64_t l : layers) {
        if (l < 0 || l >= config.layers) {
            throw ValidationError("layer index " + std::to_string(l) + " out of range [0, " +
                                  std::to_string(config.layers) + ")");
        }
    }
    KLReport report;
    report.layer_indices = layers;
    report.kl_mean.assign(layers.size(), std::vector<double>(static_cast<std::size_t>(config.heads), 0.0));
    const double inv_samples = 1.0 / static_cast<double>(samples.size());
    for (const NormalizedSample& sample : samples) {
        const auto weights = collect_slice_weights(params, config, sample.features);
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const auto& layer_weights = weights[static_cast<std::size_t>(layers[li])];
            for (std::size_t h = 0; h < layer_weights.size(); ++h) {
                report.kl_mean[li][h] += kl_uniform(layer_weights[h]) * inv_samples;
            }
        }
    }
    double aggregate = 0.0;
    for (const auto& per_head : report.kl_mean) {
        for (double v : per_head) aggregate += v;
    }
    report.aggregate_mean = aggregate / (static_cast<double>(layers.size()) * static_cast<double>(config.heads));
    return report;
}

std::string kl_report_csv(const KLReport& report) {
    std::string csv = "layer,head,kl_mean\n";
    char line[96];
    for (std::size_t li = 0; li < report.layer_indices.size(); ++li) {
        for (std::size_t h = 0; h < report.kl_mean[li].size(); ++h) {
            std::snprintf(line, sizeof(line), "%lld,%zu,%.17g\n",
                          static_cast<long long>(report.layer_indices[li]), h, report.kl_mean[li][h]);
            csv += line;
        }
    }
    return csv;
}

std::vector<AblationRow> ablation_matrix(const ModelConfig& base_config, const TrainConfig& train_config,
                                         const std::vector<MeshSample>& train_samples,
                                         const std::vector<MeshSample>& test_samples) {
    const std::vector<Variant> variants = {Variant::baseline(), Variant::ada_temp_only(),
                                           Variant::ada_temp_shared(), Variant::full()};
    auto [train_norm, stats] = normalize(train_samples);
    std::vector<AblationRow> rows;
    for (const Variant& variant : variants) {
        ModelConfig config = base_config;
        config.variant = variant;
        ModelParams params = init_params(config);
        TrainResult trained = train(params, config, train_norm, train_config);
        MetricsReport metrics = evaluate(params, config, test_samples, stats);
        double rel = 0.0;
        for (double v : metrics.relative_l2_per_field) rel += v;
        rel /= static_cast<double>(metrics.relative_l2_per_field.size());
        rows.push_back({variant_name(variant), rel, trained.log.back().loss});
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string csv = "variant,relative_l2,final_loss\n";
    char line[160];
    for (const AblationRow& r : rows) {
        std::snprintf(line, sizeof(line), "%s,%.17g,%.17g\n", r.variant.c_str(), r.relative_l2, r.final_loss);
        csv += line;
    }
    return csv;
}

// ---------------------------------------------------------------------------
// selftest

namespace {

struct SelfTest {
    std::ostream& out;
    int failures = 0;

    void check(const char* name, bool ok) {
        out << (ok ? "[ok]   " : "[FAIL] ") << name << "\n";
        if (!ok) ++failures;
    }
};

double central_difference(const std::function<double()>& f, Tensor& leaf, std::int64_t index, double h) {
    auto values = leaf.values_mut();
    const double saved = values[static_cast<std::size_t>(index)];
    values[static_cast<std::size_t>(index)] = saved + h;
    const double plus = f();
    values[static_cast<std::size_t>(index)] = saved - h;
    const double minus = f();
    values[static_cast<std::size_t>(index)] = saved;
    return (plus - minus) / (2.0 * h);
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

}  // namespace

int run_selftest(std::ostream& out, const std::string& scratch_dir) {
    SelfTest t{out};
    Pcg rng(20241105);

    {  // autograd vs central finite differences on a small composite
        Tensor x = Tensor::from({3, 4}, [&] {
            std::vector<double> v(12);
            for (double& e : v) e = rng.next_uniform(-1.0, 1.0);
            return v;
        }(), true);
        Tensor w = Tensor::from({4, 2}, [&] {
            std::vector<double> v(8);
            for (double& e : v) e = rng.next_uniform(-1.0, 1.0);
            return v;
        }(), true);
        auto loss_fn = [&] { return sum(gelu(matmul(x, w))).scalar_value(); };
        Tensor loss = sum(gelu(matmul(x, w)));
        loss.backward();
        double worst = 0.0;
        for (std::int64_t i = 0; i < w.numel(); ++i) {
            const double fd = central_difference(loss_fn, w, i, 1e-6);
            const double an = w.grad()[static_cast<std::size_t>(i)];
            worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
        }
        t.check("gradient matches central finite differences", worst < 1e-4);
    }

    {  // softmax row sums under extreme logits
        std::vector<double> logits(64 * 7);
        for (double& v : logits) v = rng.next_uniform(-50.0, 50.0);
        Tensor w = softmax_temp(Tensor::from({64, 7}, logits), Tensor::scalar(0.37));
        double worst = 0.0;
        for (std::int64_t r = 0; r < 64; ++r) {
            double s = 0.0;
            for (std::int64_t j = 0; j < 7; ++j) s += w.value_at(r * 7 + j);
            worst = std::max(worst, std::abs(s - 1.0));
        }
        t.check("softmax rows sum to one within 1e-12", worst <= 1e-12);
    }

    SliceConfig cfg;
    cfg.slices = 6;
    cfg.heads = 2;
    cfg.channels = 8;
    Pcg prng(7);
    PhysicsAttentionParams attn = init_attention_params(cfg, prng);
    NoiseSource noise(99);

    {  // no-noise reduction is bit-exact
        std::vector<double> xv(5 * 4);
        for (double& v : xv) v = rng.next_uniform(-1.0, 1.0);
        Tensor x = Tensor::from({5, 4}, xv);
        Tensor tau = Tensor::full({5, 1}, 0.5);
        Tensor a = rep_slice(x, tau, attn.heads[0].slice_proj, noise, NoiseMode::kNoNoise, 0, 0);
        Tensor b = softmax_temp(linear(x, attn.heads[0].slice_proj.weight, attn.heads[0].slice_proj.bias), tau);
        t.check("no-noise slicing reduces to temperature softmax bit-exactly", bit_equal(a.values(), b.values()));
    }

    {  // vanishing-temperature argmax agreement, identity slice projection
        std::vector<double> eye(36, 0.0);
        for (int j = 0; j < 6; ++j) eye[j * 6 + j] = 1.0;
        const LinearParams ident{Tensor::from({6, 6}, eye), Tensor::zeros({6})};
        bool all = true;
        for (std::int64_t r = 0; r < 1000 && all; ++r) {
            std::vector<double> logits(6);
            for (double& v : logits) v = rng.next_uniform(-3.0, 3.0);
            std::vector<double> perturbed(6);
            for (int j = 0; j < 6; ++j) {
                perturbed[j] = logits[j] - std::log(-std::log(noise.uniform(1, 0, r, j)));
            }
            const std::vector<std::int64_t> ids = {r};
            Tensor w = rep_slice(Tensor::from({1, 6}, logits), Tensor::full({1, 1}, 1e-4), ident, noise,
                                 NoiseMode::kTrainNoise, 1, 0, ids);
            std::int64_t argmax_w = 0, argmax_p = 0;
            for (int j = 1; j < 6; ++j) {
                if (w.value_at(j) > w.value_at(argmax_w)) argmax_w = j;
                if (perturbed[j] > perturbed[argmax_p]) argmax_p = j;
            }
            all = argmax_w == argmax_p;
        }
        t.check("vanishing temperature selects the perturbed argmax", all);
    }

    {  // permutation equivariance of one layer
        const std::int64_t n = 7;
        std::vector<double> xv(static_cast<std::size_t>(n * cfg.channels));
        for (double& v : xv) v = rng.next_uniform(-1.0, 1.0);
        Tensor x = Tensor::from({n, cfg.channels}, xv);
        AttentionResult base = physics_attention_forward(x, cfg, attn, noise);
        std::vector<std::int64_t> perm = {3, 0, 6, 2, 5, 1, 4};
        std::vector<double> pv(xv.size());
        std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            ids[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(i)];
            for (std::int64_t c = 0; c < cfg.channels; ++c) {
                pv[i * cfg.channels + c] = xv[perm[static_cast<std::size_t>(i)] * cfg.channels + c];
            }
        }
        AttentionResult permuted = physics_attention_forward(Tensor::from({n, cfg.channels}, pv), cfg, attn,
                                                             noise, 0, ids);
        bool ok = true;
        for (std::int64_t i = 0; i < n && ok; ++i) {
            for (std::int64_t c = 0; c < cfg.channels; ++c) {
                if (permuted.output.value_at(i * cfg.channels + c) !=
                    base.output.value_at(perm[static_cast<std::size_t>(i)] * cfg.channels + c)) {
                    ok = false;
                    break;
                }
            }
        }
        t.check("row permutation permutes layer output bit-exactly", ok);
    }

    {  // collective fold order and ledger formula
        CommLedger ledger;
        Collective collective(ledger);
        std::vector<Tensor> parts;
        std::vector<double> manual(6, 0.0);
        for (int k = 0; k < 4; ++k) {
            std::vector<double> v(6);
            for (double& e : v) e = rng.next_uniform(-2.0, 2.0);
            parts.push_back(Tensor::from({2, 3}, v));
        }
        for (std::size_t i = 0; i < 6; ++i) {
            double acc = parts[0].value_at(static_cast<std::int64_t>(i));
            for (int k = 1; k < 4; ++k) acc += parts[static_cast<std::size_t>(k)].value_at(static_cast<std::int64_t>(i));
            manual[i] = acc;
        }
        Tensor reduced = all_reduce_sum(parts, collective, 0, CommTag::kNorms);
        t.check("all-reduce equals the ascending left fold bit-exactly", bit_equal(reduced.values(), manual));
        t.check("all-reduce ledger payload is rank_count x elements",
                ledger.total_scalars() == 4 * 6);
    }

    {  // serial vs sharded layer
        std::vector<std::int64_t> ranks = {2, 4};
        ParallelCheckReport report = serial_parallel_check(cfg, 32, ranks, 11, true);
        t.check("sharded layer matches serial within 1e-10 / 1e-8", report.all_pass);
    }

    {  // per-layer communication is invariant to N
        CommLedger ledger;
        Collective collective(ledger);
        for (std::int64_t n : {24, 48}) {
            std::vector<double> xv(static_cast<std::size_t>(n * cfg.channels));
            for (double& v : xv) v = rng.next_uniform(-1.0, 1.0);
            Tensor x = Tensor::from({n, cfg.channels}, xv);
            RankPartition partition = partition_points(n, 4);
            std::vector<Tensor> parts;
            for (const auto& [b, e] : partition.ranges) parts.push_back(slice_rows(x, b, e));
            parallel_physics_attention(parts, cfg, attn, noise, collective);
        }
        const std::int64_t expected = comm_scalars_per_layer(cfg, 4);
        auto records = ledger.records();
        std::int64_t first = records[0].scalars + records[1].scalars;
        std::int64_t second = records[2].scalars + records[3].scalars;
        t.check("ledger payload matches #gpu x M x (C + H) for every N",
                first == expected && second == expected);
    }

    {  // container round-trips
        namespace fs = std::filesystem;
        fs::create_directories(scratch_dir);
        const std::string sample_path = (fs::path(scratch_dir) / "selftest.tpp1").string();
        std::vector<MeshSample> data = gen_sphere_dataset(1, 64, 5);
        write_sample(sample_path, data[0]);
        MeshSample back = read_sample(sample_path);
        bool ok = bit_equal(back.coords, data[0].coords) && bit_equal(back.targets, data[0].targets) &&
                  bit_equal(back.areas, data[0].areas) && bit_equal(back.normals, data[0].normals);
        t.check("sample container round-trips bit-exactly", ok);

        ModelConfig mc;
        mc.layers = 1;
        mc.heads = 2;
        mc.channels = 8;
        mc.slices = 4;
        mc.d_in = 6;
        mc.d_out = 1;
        mc.seed = 3;
        ModelParams params = init_params(mc);
        const std::string ckpt_path = (fs::path(scratch_dir) / "selftest.tppc").string();
        save_checkpoint(ckpt_path, mc, params);
        Checkpoint loaded = load_checkpoint(ckpt_path);
        bool same = true;
        std::vector<Tensor*> lhs, rhs;
        for_each_param(params, [&](const std::string&, Tensor& v) { lhs.push_back(&v); });
        for_each_param(loaded.params, [&](const std::string&, Tensor& v) { rhs.push_back(&v); });
        for (std::size_t i = 0; i < lhs.size() && same; ++i) same = bit_equal(lhs[i]->values(), rhs[i]->values());
        t.check("checkpoint container round-trips bit-exactly", same);
    }

    {  // metric oracles
        std::vector<double> truth = {1.0, 2.0, 3.0};
        std::vector<double> pred = {1.0, 2.0, 4.0};
        bool ok = std::abs(r_squared(pred, truth) - 0.5) < 1e-15;
        ok = ok && relative_l2(truth, truth) == 0.0;
        Tensor w = Tensor::from({1, 2}, {0.75, 0.25});
        ok = ok && std::abs(kl_uniform(w) - (0.75 * std::log(1.5) + 0.25 * std::log(0.5))) < 1e-15;
        t.check("metric hand oracles agree", ok);
    }

    out << (t.failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
    return t.failures;
}

}  // namespace tpp
