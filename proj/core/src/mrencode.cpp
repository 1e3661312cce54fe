#include "flow4dsr/mrencode.hpp"
#include "flow4dsr/errors.hpp"
#include "flow4dsr/log.hpp"

#include <cmath>

namespace flow4dsr {

void EncodingParams::validate() const {
    for (double v : venc)
        if (!(v > 0.0) || !std::isfinite(v))
            throw ValidationError("EncodingParams: venc must be positive and finite");
    if (!(fluid_intensity > 0.0) || !std::isfinite(fluid_intensity))
        throw ValidationError("EncodingParams: fluid_intensity must be positive");
}

PhaseVolume encode_phase(const Grid3& grid, const VolumeD& component_cm_s, double venc) {
    require_same_shape(grid.dims, component_cm_s.dims(), "encode_phase");
    if (!(venc > 0.0) || !std::isfinite(venc))
        throw ValidationError("encode_phase: venc must be positive");

    PhaseVolume out{grid, VolumeD(grid.dims)};
    const double scale = M_PI / venc;
    for (std::int64_t n = 0; n < component_cm_s.size(); ++n) {
        double v = component_cm_s[n];
        if (std::abs(v) > venc)
            throw ValidationError("encode_phase: velocity " + std::to_string(v) +
                                  " cm/s exceeds VENC " + std::to_string(venc) +
                                  " cm/s (would alias)");
        out.phase[n] = scale * v;
    }
    return out;
}

VolumeD decode_velocity(const PhaseVolume& phase, double venc) {
    if (!(venc > 0.0) || !std::isfinite(venc))
        throw ValidationError("decode_velocity: venc must be positive");
    VolumeD out(phase.grid.dims);
    const double scale = venc / M_PI;
    for (std::int64_t n = 0; n < out.size(); ++n) out[n] = scale * phase.phase[n];
    return out;
}

MagnitudeSet synth_magnitude(const FluidMask& mask, double fluid_intensity) {
    if (!(fluid_intensity > 0.0) || !std::isfinite(fluid_intensity))
        throw ValidationError("synth_magnitude: fluid_intensity must be positive");

    MagnitudeSet out{mask.grid,
                     {VolumeD(mask.grid.dims), VolumeD(mask.grid.dims), VolumeD(mask.grid.dims)}};
    bool any = false;
    for (std::int64_t n = 0; n < mask.inside.size(); ++n) {
        if (!mask.inside[n]) continue;
        any = true;
        out.m[0][n] = fluid_intensity;
        out.m[1][n] = fluid_intensity;
        out.m[2][n] = fluid_intensity;
    }
    if (!any) log::warn("synth_magnitude: empty fluid mask, magnitude is all zero");
    return out;
}

ComplexVolume to_complex(const PhaseVolume& phase, const VolumeD& magnitude) {
    require_same_shape(phase.phase.dims(), magnitude.dims(), "to_complex");
    ComplexVolume out(phase.grid);
    for (std::int64_t n = 0; n < magnitude.size(); ++n)
        out.data[n] = std::polar(magnitude[n], phase.phase[n]);
    return out;
}

std::pair<VolumeD, PhaseVolume> from_complex(const ComplexVolume& vol) {
    VolumeD mag(vol.grid.dims);
    PhaseVolume phase{vol.grid, VolumeD(vol.grid.dims)};
    for (std::int64_t n = 0; n < mag.size(); ++n) {
        cplx c = vol.data[n];
        double m = std::abs(c);
        mag[n] = m;
        phase.phase[n] = m == 0.0 ? 0.0 : std::atan2(c.imag(), c.real());
    }
    return {std::move(mag), std::move(phase)};
}

} // namespace flow4dsr
