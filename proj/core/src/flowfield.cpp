#include "flow4dsr/flowfield.hpp"
#include "flow4dsr/errors.hpp"

#include <algorithm>
#include <cmath>

namespace flow4dsr {

Waveform default_waveform() {
    return {
        {0.00, 0.10}, {0.04, 0.60}, {0.08, 1.00}, {0.14, 0.85}, {0.20, 0.45},
        {0.26, 0.15}, {0.32, 0.08}, {0.38, 0.18}, {0.44, 0.26}, {0.50, 0.16},
        {0.58, 0.10}, {0.70, 0.10},
    };
}

void FlowSpec::validate(const Grid3& grid) const {
    grid.validate();
    if (!std::isfinite(radius_mm) || !std::isfinite(peak_speed_cm_s) ||
        !std::isfinite(swirl_ratio) || !std::isfinite(stenosis_factor))
        throw ValidationError("FlowSpec: non-finite parameter");
    if (radius_mm <= 0.0) throw ValidationError("FlowSpec: radius must be positive");
    if (peak_speed_cm_s <= 0.0) throw ValidationError("FlowSpec: peak speed must be positive");
    if (kind == FlowKind::stenosed_tube &&
        (stenosis_factor <= 0.0 || stenosis_factor > 1.0))
        throw ValidationError("FlowSpec: stenosis_factor must be in (0, 1]");
    if (waveform.empty()) throw ValidationError("FlowSpec: empty waveform");
    for (auto& [t, s] : waveform) {
        if (!std::isfinite(t) || !std::isfinite(s) || s < 0.0)
            throw ValidationError("FlowSpec: waveform scales must be finite and >= 0");
    }
    for (std::size_t i = 1; i < waveform.size(); ++i)
        if (waveform[i].first <= waveform[i - 1].first)
            throw ValidationError("FlowSpec: waveform times must be strictly increasing");

    // tube cross-section must fit inside the grid
    const int a = int(axis);
    for (int c = 0; c < 3; ++c) {
        if (c == a) continue;
        double half_extent = 0.5 * double(grid.dims[c] - 1) * grid.spacing_mm[c];
        if (radius_mm > half_extent)
            throw ConfigError("FlowSpec: radius " + std::to_string(radius_mm) +
                              " mm exceeds grid half-extent " + std::to_string(half_extent) +
                              " mm on axis " + std::to_string(c));
    }
}

namespace {

// voxel-center coordinate relative to the grid center, in mm
inline double centered_mm(int i, int dim, double spacing) {
    return (double(i) - 0.5 * double(dim - 1)) * spacing;
}

} // namespace

std::pair<VelocityField, FluidMask> generate_field(const FlowSpec& spec, const Grid3& grid) {
    spec.validate(grid);

    VelocityField field(grid);
    FluidMask mask(grid);

    const int a = int(spec.axis);
    const int c1 = (a + 1) % 3;
    const int c2 = (a + 2) % 3;
    const double R = spec.radius_mm;
    const double peak = spec.peak_speed_cm_s;

    const double axis_len = double(grid.dims[a] - 1) * grid.spacing_mm[a];
    const double taper_len = 0.5 * axis_len; // stenosis occupies the middle half

    // radius profile and its derivative along the tube axis (mm, mm/mm)
    auto radius_at = [&](double z, double& dR) {
        dR = 0.0;
        if (spec.kind != FlowKind::stenosed_tube || spec.stenosis_factor >= 1.0) return R;
        if (std::abs(z) > 0.5 * taper_len) return R;
        double phase = M_PI * z / taper_len;
        double w = std::cos(phase);         // cos^2 taper, C^1 at the edges
        double depth = 1.0 - spec.stenosis_factor;
        dR = R * depth * 2.0 * w * std::sin(phase) * M_PI / taper_len;
        return R * (1.0 - depth * w * w);
    };

    Vec3i idx;
    for (int k = 0; k < grid.dims[2]; ++k) {
        for (int j = 0; j < grid.dims[1]; ++j) {
            for (int i = 0; i < grid.dims[0]; ++i) {
                idx = {i, j, k};
                double z = centered_mm(idx[a], grid.dims[a], grid.spacing_mm[a]);
                double u = centered_mm(idx[c1], grid.dims[c1], grid.spacing_mm[c1]);
                double w = centered_mm(idx[c2], grid.dims[c2], grid.spacing_mm[c2]);
                double r = std::hypot(u, w);

                double dRz;
                double Rz = radius_at(z, dRz);
                if (r > Rz) continue;
                mask.inside(i, j, k) = 1;

                double B = Rz * Rz;
                double A = peak * (R * R) / B; // axial peak, mass-conserving speed-up
                double vz = A * (1.0 - r * r / B);

                double vu = 0.0, vw = 0.0;
                if (spec.kind == FlowKind::helical_tube && spec.swirl_ratio != 0.0) {
                    // solid-body-like tangential component, v_theta = c*r/R
                    double c = spec.swirl_ratio * peak / R;
                    vu = -c * w;
                    vw = c * u;
                }
                if (spec.kind == FlowKind::stenosed_tube && dRz != 0.0) {
                    // radial component from continuity:
                    //   v_r/r = -[A'(1/2 - r^2/(4B)) + A B' r^2 / (4B^2)]
                    double Ap = -2.0 * A * dRz / Rz;
                    double Bp = 2.0 * Rz * dRz;
                    double vr_over_r =
                        -(Ap * (0.5 - r * r / (4.0 * B)) + A * Bp * r * r / (4.0 * B * B));
                    // v is cm/s over mm coordinates; vr_over_r carries 1/mm from A',B'
                    vu += vr_over_r * u;
                    vw += vr_over_r * w;
                }

                field.v[std::size_t(a)](i, j, k) = vz;
                field.v[std::size_t(c1)](i, j, k) = vu;
                field.v[std::size_t(c2)](i, j, k) = vw;
            }
        }
    }

    return {std::move(field), std::move(mask)};
}

double waveform_scale(const Waveform& waveform, double t) {
    if (waveform.empty()) throw ValidationError("waveform_scale: empty waveform");
    if (t < waveform.front().first || t > waveform.back().first)
        throw ValidationError("waveform_scale: t=" + std::to_string(t) +
                              " outside waveform span");
    auto it = std::lower_bound(waveform.begin(), waveform.end(), t,
                               [](const auto& knot, double tt) { return knot.first < tt; });
    if (it == waveform.begin()) return it->second;
    if (it == waveform.end()) return waveform.back().second;
    auto [t1, s1] = *it;
    auto [t0, s0] = *(it - 1);
    double u = (t - t0) / (t1 - t0);
    return s0 + u * (s1 - s0);
}

VelocityField modulate_temporal(const VelocityField& field, const Waveform& waveform, double t) {
    double s = waveform_scale(waveform, t);
    VelocityField out = field;
    for (auto& comp : out.v)
        for (std::int64_t n = 0; n < comp.size(); ++n) comp[n] *= s;
    return out;
}

FrameSequence sample_frames(const FlowSpec& spec, const Grid3& grid, int n_frames) {
    if (n_frames < 1) throw ValidationError("sample_frames: n_frames must be >= 1");
    auto [base, mask] = generate_field(spec, grid);

    FrameSequence seq;
    seq.mask = std::move(mask);
    seq.frames.reserve(std::size_t(n_frames));
    seq.times.reserve(std::size_t(n_frames));

    const double t0 = spec.waveform.front().first;
    const double t1 = spec.waveform.back().first;
    for (int f = 0; f < n_frames; ++f) {
        double t = n_frames == 1 ? t0 : t0 + (t1 - t0) * double(f) / double(n_frames - 1);
        seq.times.push_back(t);
        seq.frames.push_back(modulate_temporal(base, spec.waveform, t));
    }
    return seq;
}

} // namespace flow4dsr
