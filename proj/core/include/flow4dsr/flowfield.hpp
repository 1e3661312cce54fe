#pragma once

#include "flow4dsr/volume.hpp"

#include <utility>
#include <vector>

namespace flow4dsr {

enum class Axis { x = 0, y = 1, z = 2 };

enum class FlowKind { poiseuille_tube, helical_tube, stenosed_tube };

/// Three velocity component volumes (cm/s) on a shared grid.
struct VelocityField {
    Grid3 grid;
    std::array<VolumeD, 3> v; // vx, vy, vz

    VelocityField() = default;
    explicit VelocityField(const Grid3& g)
        : grid(g), v{VolumeD(g.dims), VolumeD(g.dims), VolumeD(g.dims)} {}
};

struct FluidMask {
    Grid3 grid;
    Volume<std::uint8_t> inside;

    FluidMask() = default;
    explicit FluidMask(const Grid3& g) : grid(g), inside(g.dims, 0) {}

    std::int64_t count() const {
        std::int64_t n = 0;
        for (std::int64_t i = 0; i < inside.size(); ++i) n += inside[i] ? 1 : 0;
        return n;
    }
};

/// (time_s, scale) knots of a piecewise-linear flow waveform.
using Waveform = std::vector<std::pair<double, double>>;

/// Two-lobe systole/diastole-like default cycle over 0.70 s. The knot values
/// are fixed project defaults, not measured data.
Waveform default_waveform();

/// Closed-form tube flow standing in for a solver-produced field.
struct FlowSpec {
    FlowKind kind = FlowKind::poiseuille_tube;
    Axis axis = Axis::z;
    double radius_mm = 8.0;
    double peak_speed_cm_s = 100.0;
    double swirl_ratio = 0.0;      // helical only: tangential peak / axial peak
    double stenosis_factor = 1.0;  // stenosed only: midpoint radius fraction, (0,1]
    Waveform waveform = default_waveform();

    void validate(const Grid3& grid) const;
};

/// Analytic field + mask for `spec` on `grid`. Velocity is exactly zero
/// outside the mask and the continuum field is divergence-free inside.
std::pair<VelocityField, FluidMask> generate_field(const FlowSpec& spec, const Grid3& grid);

/// Scale every component by the waveform value interpolated at time t.
VelocityField modulate_temporal(const VelocityField& field, const Waveform& waveform, double t);

/// Piecewise-linear waveform lookup; t must lie within the knot span.
double waveform_scale(const Waveform& waveform, double t);

struct FrameSequence {
    std::vector<VelocityField> frames;
    std::vector<double> times;
    FluidMask mask; // constant across frames
};

/// n_frames fields at uniform times across the waveform span.
FrameSequence sample_frames(const FlowSpec& spec, const Grid3& grid, int n_frames);

} // namespace flow4dsr
