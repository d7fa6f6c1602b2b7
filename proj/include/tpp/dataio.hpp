#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tpp/tensor.hpp"

namespace tpp {

/// One geometry instance: point coordinates plus optional normals, extra
/// feature channels, per-point surface areas, and the target fields.
struct MeshSample {
    std::int64_t n = 0;
    std::int64_t d_extra = 0;
    std::int64_t d_out = 0;
    std::vector<double> coords;   // n x 3
    std::vector<double> normals;  // n x 3, or empty
    std::vector<double> extra;    // n x d_extra, or empty
    std::vector<double> targets;  // n x d_out
    std::vector<double> areas;    // n, or empty

    bool has_normals() const { return !normals.empty(); }
    bool has_areas() const { return !areas.empty(); }
    std::int64_t feature_width() const { return 3 + (has_normals() ? 3 : 0) + d_extra; }

    /// Checks leading extents, unit normals (within 1e-6), positive areas.
    void validate() const;
};

// "TPP1" binary container: magic, then little-endian u32 fields
// n, d_coords(=3), has_normals, d_extra, d_out, has_areas, then the arrays
// in declaration order as little-endian 64-bit floats. Round-trips are
// bit-exact; a reader allocates only the payload plus small constants.
void write_sample(const std::string& path, const MeshSample& sample);
MeshSample read_sample(const std::string& path);

/// Near-uniform unit-sphere point set (returns n x 3 row-major coordinates).
std::vector<double> fibonacci_sphere(std::int64_t n);

/// Deterministic ellipsoid sample: fibonacci points mapped through
/// rotation * diag(semi_axes), exact analytic normals, per-point areas from
/// the surface Jacobian of that map, and a smooth analytic surface-pressure
/// target p = 1 - 2.25 (1 - (normal . flow)^2), the classic attached-flow
/// pressure profile around a bluff body.
MeshSample make_ellipsoid_sample(std::int64_t n_points, const std::array<double, 3>& semi_axes,
                                 const std::array<double, 9>& rotation,
                                 const std::array<double, 3>& flow_dir);

/// Row-major rotation matrix from a unit quaternion (w, x, y, z).
std::array<double, 9> rotation_from_quat(const std::array<double, 4>& q);

/// Seeded dataset of randomly scaled/rotated ellipsoids; bit-identical for
/// the same seed. Flow direction is the global +x axis.
std::vector<MeshSample> gen_sphere_dataset(std::int64_t count, std::int64_t n_points, std::uint64_t seed);

inline constexpr std::array<double, 3> kFlowDirection{1.0, 0.0, 0.0};
inline constexpr std::array<double, 3> kLiftDirection{0.0, 0.0, 1.0};

struct NormStats {
    std::vector<double> feature_mean;
    std::vector<double> feature_std;  // floored at 1e-8
    std::vector<double> target_mean;
    std::vector<double> target_std;
};

/// Raw per-point features: coords ++ normals ++ extra, shape [n x width].
Tensor assemble_features(const MeshSample& sample);
Tensor assemble_targets(const MeshSample& sample);

NormStats compute_norm_stats(const std::vector<MeshSample>& train_samples);

struct NormalizedSample {
    Tensor features;  // [n x width], standardized
    Tensor targets;   // [n x d_out], standardized
};

/// Standardizes features and targets channelwise. With stats omitted they
/// are computed from the given samples (the training split); a test split
/// passes the training statistics in.
std::pair<std::vector<NormalizedSample>, NormStats> normalize(const std::vector<MeshSample>& samples,
                                                              const NormStats* stats = nullptr);

std::vector<double> denormalize_targets(std::span<const double> normalized, std::int64_t d_out,
                                        const NormStats& stats);

struct DatasetManifest {
    std::string split;  // "train" | "test"
    std::vector<std::string> files;
    std::vector<std::string> input_channels;
    std::vector<std::string> target_channels;
    NormStats stats;
};

void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

/// Reads every sample listed by the manifest (paths relative to the
/// manifest's directory), validating parse success and consistent widths.
std::vector<MeshSample> load_samples(const std::string& manifest_path);

}  // namespace tpp
