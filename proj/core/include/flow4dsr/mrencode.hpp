#pragma once

#include "flow4dsr/flowfield.hpp"
#include "flow4dsr/volume.hpp"

namespace flow4dsr {

/// Velocity-encoding parameters: one VENC (cm/s) per component plus the
/// constant fluid signal level used for synthetic magnitude images.
struct EncodingParams {
    Vec3d venc{100.0, 100.0, 100.0};
    double fluid_intensity = 120.0;

    void validate() const;
};

/// Per-voxel signal phase in radians, range [-pi, pi].
struct PhaseVolume {
    Grid3 grid;
    VolumeD phase;
};

/// One magnitude image per velocity component. Identical for synthetic
/// data (single mask, single intensity) but kept as three volumes because
/// the network input formula consumes three.
struct MagnitudeSet {
    Grid3 grid;
    std::array<VolumeD, 3> m;
};

struct ComplexVolume {
    Grid3 grid;
    Volume<cplx> data;

    ComplexVolume() = default;
    explicit ComplexVolume(const Grid3& g) : grid(g), data(g.dims) {}
    ComplexVolume(const Grid3& g, Volume<cplx> d) : grid(g), data(std::move(d)) {}
};

/// phase = pi * v / venc. Refuses aliasing (any |v| > venc) rather than wrap.
PhaseVolume encode_phase(const Grid3& grid, const VolumeD& component_cm_s, double venc);

/// v = venc * phase / pi; inverse of encode_phase to floating precision.
VolumeD decode_velocity(const PhaseVolume& phase, double venc);

/// Constant `fluid_intensity` inside the mask, exact zero outside.
MagnitudeSet synth_magnitude(const FluidMask& mask, double fluid_intensity);

/// value = magnitude * exp(i * phase)
ComplexVolume to_complex(const PhaseVolume& phase, const VolumeD& magnitude);

/// Modulus and argument. Phase of a zero-magnitude sample is 0 by convention.
std::pair<VolumeD, PhaseVolume> from_complex(const ComplexVolume& vol);

} // namespace flow4dsr
