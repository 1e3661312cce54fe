#pragma once

#include "flow4dsr/flowfield.hpp"
#include "flow4dsr/volume.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace flow4dsr {

struct MetricConfig {
    double epsilon = 1e-5; // denominator guard of the relative speed error
};

/// Axis-aligned analysis plane with a 2D in-plane region mask.
struct PlaneSpec {
    Axis axis = Axis::z;
    int index = 0;
    Vec3i volume_dims{0, 0, 0};
    std::vector<std::uint8_t> region; // (c1, c2) cross-axes, c1 fastest

    int dim_c1() const { return volume_dims[(int(axis) + 1) % 3]; }
    int dim_c2() const { return volume_dims[(int(axis) + 2) % 3]; }
};

/// Plane region taken from a fluid-mask slice.
PlaneSpec make_plane(const FluidMask& mask, Axis axis, int index);

/// Mean over mask voxels of |pred - truth| / sqrt(vx^2+vy^2+vz^2+eps),
/// with the Euclidean norm over components and truth in the denominator.
double rel_speed_error(const VelocityField& pred, const VelocityField& truth,
                       const FluidMask& mask, const MetricConfig& cfg = {});

/// Integral of the through-plane velocity over the region, in mL/s.
double flow_rate(const VelocityField& field, const PlaneSpec& plane);

struct FlowRateError {
    double diff_ml_s = 0.0;
    double percent = 0.0; // 100 * (pred - truth) / truth
};

FlowRateError flow_rate_error(double pred_ml_s, double truth_ml_s);

/// "d.d" / "d.d%" rendering used in reports (one decimal, as printed in the
/// flow-rate comparison tables).
std::string format_1dp(double value);

/// Central-difference divergence (1/s) on interior mask voxels, 0 elsewhere.
VolumeD divergence_field(const VelocityField& field, const FluidMask& mask);

struct DivergenceStats {
    double mean_abs = 0.0;
    double max_abs = 0.0;
    std::int64_t voxels = 0;
};

DivergenceStats divergence_stats(const VelocityField& field, const FluidMask& mask);

struct BlandAltman {
    double bias = 0.0;
    double sd = 0.0; // sample standard deviation (n-1)
    double lo = 0.0; // bias - 1.96 sd
    double hi = 0.0; // bias + 1.96 sd
};

BlandAltman bland_altman(const std::vector<double>& pred, const std::vector<double>& truth);

/// Up to `count` distinct mask voxel indices, seeded partial Fisher-Yates.
std::vector<std::int64_t> sample_mask_voxels(const FluidMask& mask, std::int64_t count,
                                             std::uint64_t seed);

/// Per-component trilinear 2x interpolation baseline (same coordinate
/// convention as the network's upsampling layer).
VelocityField upsample_trilinear_baseline(const VelocityField& lr);

/// Per-component tricubic 2x baseline: separable 4-tap Lagrange cubic
/// kernel with edge clamping; reproduces cubic polynomials exactly.
VelocityField upsample_tricubic_baseline(const VelocityField& lr);

/// Per-volume evaluation record.
struct MetricReport {
    int frame = 0;
    std::string method;
    double rel_speed_error_mean = 0.0;
    std::vector<double> flow_rates_ml_s;       // per plane
    std::vector<double> truth_flow_rates_ml_s; // per plane
    std::vector<FlowRateError> flow_rate_errors;
    DivergenceStats divergence;
    std::array<BlandAltman, 3> bland_altman_per_component{};

    std::string to_json() const;
};

} // namespace flow4dsr
