#include "tpp/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "tpp/binary_io.hpp"
#include "tpp/rng.hpp"

namespace tpp {

namespace {
constexpr char kSampleMagic[4] = {'T', 'P', 'P', '1'};
constexpr double kPi = 3.14159265358979323846;
}  // namespace

void MeshSample::validate() const {
    if (n < 1) throw ValidationError("sample must contain at least one point, got n=" + std::to_string(n));
    if (static_cast<std::int64_t>(coords.size()) != n * 3) {
        throw ValidationError("coords length " + std::to_string(coords.size()) + " != 3n for n=" +
                              std::to_string(n));
    }
    if (has_normals()) {
        if (static_cast<std::int64_t>(normals.size()) != n * 3) {
            throw ValidationError("normals length " + std::to_string(normals.size()) + " != 3n");
        }
        for (std::int64_t i = 0; i < n; ++i) {
            const double* v = normals.data() + i * 3;
            const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            if (std::abs(norm - 1.0) > 1e-6) {
                throw ValidationError("normal " + std::to_string(i) + " has length " + std::to_string(norm));
            }
        }
    }
    if (static_cast<std::int64_t>(extra.size()) != n * d_extra) {
        throw ValidationError("extra length " + std::to_string(extra.size()) + " != n*d_extra");
    }
    if (d_out < 1 || static_cast<std::int64_t>(targets.size()) != n * d_out) {
        throw ValidationError("targets length " + std::to_string(targets.size()) + " != n*d_out for d_out=" +
                              std::to_string(d_out));
    }
    if (has_areas()) {
        if (static_cast<std::int64_t>(areas.size()) != n) {
            throw ValidationError("areas length " + std::to_string(areas.size()) + " != n");
        }
        for (std::int64_t i = 0; i < n; ++i) {
            if (!(areas[i] > 0.0)) {
                throw ValidationError("area " + std::to_string(i) + " is not strictly positive: " +
                                      std::to_string(areas[i]));
            }
        }
    }
}

void write_sample(const std::string& path, const MeshSample& sample) {
    sample.validate();
    io::Writer w(path);
    w.magic(kSampleMagic);
    w.u32(static_cast<std::uint32_t>(sample.n));
    w.u32(3);
    w.u32(sample.has_normals() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(sample.d_extra));
    w.u32(static_cast<std::uint32_t>(sample.d_out));
    w.u32(sample.has_areas() ? 1 : 0);
    w.f64_array(sample.coords.data(), sample.coords.size());
    if (sample.has_normals()) w.f64_array(sample.normals.data(), sample.normals.size());
    if (sample.d_extra > 0) w.f64_array(sample.extra.data(), sample.extra.size());
    w.f64_array(sample.targets.data(), sample.targets.size());
    if (sample.has_areas()) w.f64_array(sample.areas.data(), sample.areas.size());
    w.finish(path);
}

MeshSample read_sample(const std::string& path) {
    io::Reader r(path, kSampleMagic);
    MeshSample sample;
    sample.n = r.u32("point count");
    const std::uint32_t d_coords = r.u32("coordinate width");
    if (d_coords != 3) {
        throw FormatError("'" + path + "': unsupported coordinate width " + std::to_string(d_coords) +
                          " at byte offset " + std::to_string(r.offset() - 4));
    }
    const bool has_normals = r.u32("normals flag") != 0;
    sample.d_extra = r.u32("extra width");
    sample.d_out = r.u32("target width");
    const bool has_areas = r.u32("areas flag") != 0;
    const std::size_t n = static_cast<std::size_t>(sample.n);
    sample.coords = r.f64_array(n * 3, "coords section");
    if (has_normals) sample.normals = r.f64_array(n * 3, "normals section");
    if (sample.d_extra > 0) sample.extra = r.f64_array(n * static_cast<std::size_t>(sample.d_extra), "extra section");
    sample.targets = r.f64_array(n * static_cast<std::size_t>(sample.d_out), "targets section");
    if (has_areas) sample.areas = r.f64_array(n, "areas section");
    r.expect_eof("areas section");
    sample.validate();
    return sample;
}

std::vector<double> fibonacci_sphere(std::int64_t n) {
    std::vector<double> pts(static_cast<std::size_t>(n * 3));
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (std::int64_t i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        const double radius = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * static_cast<double>(i);
        pts[i * 3 + 0] = radius * std::cos(phi);
        pts[i * 3 + 1] = radius * std::sin(phi);
        pts[i * 3 + 2] = z;
    }
    return pts;
}

std::array<double, 9> rotation_from_quat(const std::array<double, 4>& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

namespace {

std::array<double, 3> mat_vec(const std::array<double, 9>& m, const double* v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

}  // namespace

MeshSample make_ellipsoid_sample(std::int64_t n_points, const std::array<double, 3>& semi_axes,
                                 const std::array<double, 9>& rotation,
                                 const std::array<double, 3>& flow_dir) {
    if (n_points < 10) throw ValidationError("ellipsoid sample needs at least 10 points");
    const double a = semi_axes[0], b = semi_axes[1], c = semi_axes[2];
    MeshSample sample;
    sample.n = n_points;
    sample.d_out = 1;
    sample.coords.resize(static_cast<std::size_t>(n_points * 3));
    sample.normals.resize(static_cast<std::size_t>(n_points * 3));
    sample.targets.resize(static_cast<std::size_t>(n_points));
    sample.areas.resize(static_cast<std::size_t>(n_points));
    const std::vector<double> unit = fibonacci_sphere(n_points);
    const double det = a * b * c;
    const double patch = 4.0 * kPi / static_cast<double>(n_points);
    for (std::int64_t i = 0; i < n_points; ++i) {
        const double* u = unit.data() + i * 3;
        const double scaled[3] = {a * u[0], b * u[1], c * u[2]};
        const std::array<double, 3> p = mat_vec(rotation, scaled);
        sample.coords[i * 3 + 0] = p[0];
        sample.coords[i * 3 + 1] = p[1];
        sample.coords[i * 3 + 2] = p[2];
        // Outward normal of x = R diag(a,b,c) u is R diag(1/a,1/b,1/c) u,
        // normalized; the local area stretch of that map is
        // |det| * ||diag(1/a,1/b,1/c) u||.
        const double inv_scaled[3] = {u[0] / a, u[1] / b, u[2] / c};
        const double stretch =
            std::sqrt(inv_scaled[0] * inv_scaled[0] + inv_scaled[1] * inv_scaled[1] + inv_scaled[2] * inv_scaled[2]);
        const std::array<double, 3> nr = mat_vec(rotation, inv_scaled);
        const double inv_len = 1.0 / stretch;
        sample.normals[i * 3 + 0] = nr[0] * inv_len;
        sample.normals[i * 3 + 1] = nr[1] * inv_len;
        sample.normals[i * 3 + 2] = nr[2] * inv_len;
        sample.areas[i] = patch * det * stretch;
        // Smooth analytic surface pressure: stagnation value 1 where the
        // normal faces the flow, suction elsewhere.
        const double cos_theta = sample.normals[i * 3 + 0] * flow_dir[0] +
                                 sample.normals[i * 3 + 1] * flow_dir[1] +
                                 sample.normals[i * 3 + 2] * flow_dir[2];
        sample.targets[i] = 1.0 - 2.25 * (1.0 - cos_theta * cos_theta);
    }
    return sample;
}

std::vector<MeshSample> gen_sphere_dataset(std::int64_t count, std::int64_t n_points, std::uint64_t seed) {
    if (n_points < 10) throw ValidationError("gen_sphere_dataset needs n_points >= 10");
    Pcg rng(seed);
    std::vector<MeshSample> samples;
    samples.reserve(static_cast<std::size_t>(count));
    for (std::int64_t s = 0; s < count; ++s) {
        std::array<double, 3> axes;
        for (double& ax : axes) ax = rng.next_uniform(0.6, 1.5);
        // Uniform random rotation via a normalized 4-gaussian quaternion.
        std::array<double, 4> q;
        double norm_sq = 0.0;
        for (double& qi : q) {
            const double u1 = rng.next_unit();
            const double u2 = rng.next_unit();
            qi = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
            norm_sq += qi * qi;
        }
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (double& qi : q) qi *= inv;
        samples.push_back(make_ellipsoid_sample(n_points, axes, rotation_from_quat(q), kFlowDirection));
    }
    return samples;
}

Tensor assemble_features(const MeshSample& sample) {
    const std::int64_t width = sample.feature_width();
    std::vector<double> values(static_cast<std::size_t>(sample.n * width));
    for (std::int64_t i = 0; i < sample.n; ++i) {
        double* row = values.data() + i * width;
        std::int64_t col = 0;
        for (std::int64_t d = 0; d < 3; ++d) row[col++] = sample.coords[i * 3 + d];
        if (sample.has_normals()) {
            for (std::int64_t d = 0; d < 3; ++d) row[col++] = sample.normals[i * 3 + d];
        }
        for (std::int64_t d = 0; d < sample.d_extra; ++d) row[col++] = sample.extra[i * sample.d_extra + d];
    }
    return Tensor::from({sample.n, width}, std::move(values));
}

Tensor assemble_targets(const MeshSample& sample) {
    return Tensor::from({sample.n, sample.d_out}, sample.targets);
}

namespace {

void accumulate_stats(const Tensor& rows, std::vector<double>& mean, std::vector<double>& m2,
                      std::int64_t& count) {
    const std::int64_t width = rows.dim(1);
    if (mean.empty()) {
        mean.assign(static_cast<std::size_t>(width), 0.0);
        m2.assign(static_cast<std::size_t>(width), 0.0);
    }
    auto v = rows.values();
    const std::int64_t n = rows.dim(0);
    for (std::int64_t i = 0; i < n; ++i) {
        ++count;
        for (std::int64_t c = 0; c < width; ++c) {
            const double x = v[i * width + c];
            const double delta = x - mean[c];
            mean[c] += delta / static_cast<double>(count);
            m2[c] += delta * (x - mean[c]);
        }
    }
}

std::vector<double> finalize_std(const std::vector<double>& m2, std::int64_t count) {
    std::vector<double> out(m2.size());
    for (std::size_t c = 0; c < m2.size(); ++c) {
        out[c] = std::max(std::sqrt(m2[c] / static_cast<double>(count)), 1e-8);
    }
    return out;
}

Tensor standardize(const Tensor& rows, const std::vector<double>& mean, const std::vector<double>& stdev) {
    const std::int64_t n = rows.dim(0);
    const std::int64_t width = rows.dim(1);
    if (static_cast<std::size_t>(width) != mean.size()) {
        throw DimensionError("normalization width mismatch: data has " + std::to_string(width) +
                             " channels, stats have " + std::to_string(mean.size()));
    }
    auto v = rows.values();
    std::vector<double> out(v.size());
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < width; ++c) out[i * width + c] = (v[i * width + c] - mean[c]) / stdev[c];
    }
    return Tensor::from({n, width}, std::move(out));
}

}  // namespace

NormStats compute_norm_stats(const std::vector<MeshSample>& train_samples) {
    if (train_samples.empty()) throw ValidationError("cannot compute normalization statistics of an empty split");
    NormStats stats;
    std::vector<double> fmean, fm2, tmean, tm2;
    std::int64_t fcount = 0, tcount = 0;
    for (const MeshSample& s : train_samples) {
        accumulate_stats(assemble_features(s), fmean, fm2, fcount);
        accumulate_stats(assemble_targets(s), tmean, tm2, tcount);
    }
    stats.feature_mean = fmean;
    stats.feature_std = finalize_std(fm2, fcount);
    stats.target_mean = tmean;
    stats.target_std = finalize_std(tm2, tcount);
    return stats;
}

std::pair<std::vector<NormalizedSample>, NormStats> normalize(const std::vector<MeshSample>& samples,
                                                              const NormStats* stats) {
    NormStats used = stats ? *stats : compute_norm_stats(samples);
    std::vector<NormalizedSample> out;
    out.reserve(samples.size());
    for (const MeshSample& s : samples) {
        out.push_back({standardize(assemble_features(s), used.feature_mean, used.feature_std),
                       standardize(assemble_targets(s), used.target_mean, used.target_std)});
    }
    return {std::move(out), std::move(used)};
}

std::vector<double> denormalize_targets(std::span<const double> normalized, std::int64_t d_out,
                                        const NormStats& stats) {
    if (static_cast<std::size_t>(d_out) != stats.target_mean.size()) {
        throw DimensionError("denormalize width mismatch");
    }
    std::vector<double> out(normalized.size());
    const std::int64_t n = static_cast<std::int64_t>(normalized.size()) / d_out;
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < d_out; ++c) {
            out[i * d_out + c] = normalized[i * d_out + c] * stats.target_std[c] + stats.target_mean[c];
        }
    }
    return out;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
    nlohmann::json j;
    j["split"] = manifest.split;
    j["files"] = manifest.files;
    j["input_channels"] = manifest.input_channels;
    j["target_channels"] = manifest.target_channels;
    j["normalization"] = {{"feature_mean", manifest.stats.feature_mean},
                          {"feature_std", manifest.stats.feature_std},
                          {"target_mean", manifest.stats.target_mean},
                          {"target_std", manifest.stats.target_std}};
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path + "' is not valid JSON: " + e.what());
    }
    DatasetManifest manifest;
    try {
        manifest.split = j.at("split").get<std::string>();
        manifest.files = j.at("files").get<std::vector<std::string>>();
        manifest.input_channels = j.at("input_channels").get<std::vector<std::string>>();
        manifest.target_channels = j.at("target_channels").get<std::vector<std::string>>();
        const auto& norm = j.at("normalization");
        manifest.stats.feature_mean = norm.at("feature_mean").get<std::vector<double>>();
        manifest.stats.feature_std = norm.at("feature_std").get<std::vector<double>>();
        manifest.stats.target_mean = norm.at("target_mean").get<std::vector<double>>();
        manifest.stats.target_std = norm.at("target_std").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + path + "' is missing manifest keys: " + e.what());
    }
    return manifest;
}

std::vector<MeshSample> load_samples(const std::string& manifest_path) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    std::vector<MeshSample> samples;
    samples.reserve(manifest.files.size());
    for (const std::string& file : manifest.files) {
        const std::filesystem::path p = std::filesystem::path(file).is_absolute() ? file : base / file;
        samples.push_back(read_sample(p.string()));
        const MeshSample& s = samples.back();
        if (!samples.empty() && (s.feature_width() != samples.front().feature_width() ||
                                 s.d_out != samples.front().d_out)) {
            throw ValidationError("sample '" + file + "' has inconsistent channel widths");
        }
    }
    return samples;
}

}  // namespace tpp
