#include "flow4dsr/metrics.hpp"
#include "flow4dsr/errors.hpp"
#include "flow4dsr/layers.hpp"
#include "flow4dsr/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace flow4dsr {

using nlohmann::json;

PlaneSpec make_plane(const FluidMask& mask, Axis axis, int index) {
    const int a = int(axis);
    if (index < 0 || index >= mask.grid.dims[a])
        throw ValidationError("make_plane: index outside the volume");
    PlaneSpec plane;
    plane.axis = axis;
    plane.index = index;
    plane.volume_dims = mask.grid.dims;
    const int c1 = (a + 1) % 3, c2 = (a + 2) % 3;
    plane.region.assign(std::size_t(plane.dim_c1()) * std::size_t(plane.dim_c2()), 0);
    bool any = false;
    Vec3i at;
    at[a] = index;
    for (int q = 0; q < mask.grid.dims[c2]; ++q)
        for (int p = 0; p < mask.grid.dims[c1]; ++p) {
            at[c1] = p;
            at[c2] = q;
            if (mask.inside(at[0], at[1], at[2])) {
                plane.region[std::size_t(q) * std::size_t(plane.dim_c1()) + std::size_t(p)] = 1;
                any = true;
            }
        }
    if (!any) throw ValidationError("make_plane: empty region at the requested plane");
    return plane;
}

double rel_speed_error(const VelocityField& pred, const VelocityField& truth,
                       const FluidMask& mask, const MetricConfig& cfg) {
    require_same_shape(pred.grid.dims, truth.grid.dims, "rel_speed_error");
    require_same_shape(pred.grid.dims, mask.grid.dims, "rel_speed_error mask");
    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t n = 0; n < mask.inside.size(); ++n) {
        if (!mask.inside[n]) continue;
        double ex = pred.v[0][n] - truth.v[0][n];
        double ey = pred.v[1][n] - truth.v[1][n];
        double ez = pred.v[2][n] - truth.v[2][n];
        double s2 = truth.v[0][n] * truth.v[0][n] + truth.v[1][n] * truth.v[1][n] +
                    truth.v[2][n] * truth.v[2][n];
        acc += std::sqrt(ex * ex + ey * ey + ez * ez) / std::sqrt(s2 + cfg.epsilon);
        ++count;
    }
    if (count == 0) throw ValidationError("rel_speed_error: empty fluid mask");
    return acc / double(count);
}

double flow_rate(const VelocityField& field, const PlaneSpec& plane) {
    const int a = int(plane.axis);
    require_same_shape(field.grid.dims, plane.volume_dims, "flow_rate");
    if (plane.index < 0 || plane.index >= field.grid.dims[a])
        throw ValidationError("flow_rate: plane outside the volume");
    const int c1 = (a + 1) % 3, c2 = (a + 2) % 3;
    // velocity is cm/s; voxel face area mm^2 -> cm^2 gives cm^3/s = mL/s
    const double face_cm2 =
        (field.grid.spacing_mm[c1] / 10.0) * (field.grid.spacing_mm[c2] / 10.0);
    double acc = 0.0;
    bool any = false;
    Vec3i at;
    at[a] = plane.index;
    for (int q = 0; q < field.grid.dims[c2]; ++q)
        for (int p = 0; p < field.grid.dims[c1]; ++p) {
            if (!plane.region[std::size_t(q) * std::size_t(plane.dim_c1()) + std::size_t(p)])
                continue;
            at[c1] = p;
            at[c2] = q;
            acc += field.v[std::size_t(a)](at[0], at[1], at[2]);
            any = true;
        }
    if (!any) throw ValidationError("flow_rate: empty plane region");
    return acc * face_cm2;
}

FlowRateError flow_rate_error(double pred_ml_s, double truth_ml_s) {
    FlowRateError e;
    e.diff_ml_s = pred_ml_s - truth_ml_s;
    e.percent = 100.0 * e.diff_ml_s / truth_ml_s;
    return e;
}

std::string format_1dp(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f", value);
    return buf;
}

VolumeD divergence_field(const VelocityField& field, const FluidMask& mask) {
    const Vec3i& d = field.grid.dims;
    for (int a = 0; a < 3; ++a)
        if (d[a] < 3) throw ValidationError("divergence_field: dims must be >= 3");
    require_same_shape(d, mask.grid.dims, "divergence_field");

    VolumeD div(d, 0.0);
    const double inv2[3] = {10.0 / (2.0 * field.grid.spacing_mm[0]),
                            10.0 / (2.0 * field.grid.spacing_mm[1]),
                            10.0 / (2.0 * field.grid.spacing_mm[2])}; // cm/s per cm -> 1/s
    for (int k = 1; k < d[2] - 1; ++k)
        for (int j = 1; j < d[1] - 1; ++j)
            for (int i = 1; i < d[0] - 1; ++i) {
                if (!mask.inside(i, j, k)) continue;
                double dx = (field.v[0](i + 1, j, k) - field.v[0](i - 1, j, k)) * inv2[0];
                double dy = (field.v[1](i, j + 1, k) - field.v[1](i, j - 1, k)) * inv2[1];
                double dz = (field.v[2](i, j, k + 1) - field.v[2](i, j, k - 1)) * inv2[2];
                div(i, j, k) = dx + dy + dz;
            }
    return div;
}

DivergenceStats divergence_stats(const VelocityField& field, const FluidMask& mask) {
    VolumeD div = divergence_field(field, mask);
    const Vec3i& d = field.grid.dims;
    DivergenceStats s;
    for (int k = 1; k < d[2] - 1; ++k)
        for (int j = 1; j < d[1] - 1; ++j)
            for (int i = 1; i < d[0] - 1; ++i) {
                if (!mask.inside(i, j, k)) continue;
                double v = std::abs(div(i, j, k));
                s.mean_abs += v;
                s.max_abs = std::max(s.max_abs, v);
                ++s.voxels;
            }
    if (s.voxels > 0) s.mean_abs /= double(s.voxels);
    return s;
}

BlandAltman bland_altman(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size())
        throw ValidationError("bland_altman: sample size mismatch");
    const std::size_t n = pred.size();
    if (n < 2) throw ValidationError("bland_altman: need at least 2 pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += pred[i] - truth[i];
    mean /= double(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = pred[i] - truth[i] - mean;
        ss += d * d;
    }
    BlandAltman out;
    out.bias = mean;
    out.sd = std::sqrt(ss / double(n - 1));
    out.lo = out.bias - 1.96 * out.sd;
    out.hi = out.bias + 1.96 * out.sd;
    return out;
}

std::vector<std::int64_t> sample_mask_voxels(const FluidMask& mask, std::int64_t count,
                                             std::uint64_t seed) {
    std::vector<std::int64_t> pool;
    for (std::int64_t n = 0; n < mask.inside.size(); ++n)
        if (mask.inside[n]) pool.push_back(n);
    if (pool.empty()) throw ValidationError("sample_mask_voxels: empty mask");
    Rng rng(seed);
    const std::int64_t take = std::min<std::int64_t>(count, std::int64_t(pool.size()));
    for (std::int64_t i = 0; i < take; ++i) {
        std::int64_t j = i + std::int64_t(rng.uniform() * double(pool.size() - i));
        if (j >= std::int64_t(pool.size())) j = std::int64_t(pool.size()) - 1;
        std::swap(pool[std::size_t(i)], pool[std::size_t(j)]);
    }
    pool.resize(std::size_t(take));
    return pool;
}

// ---- interpolation baselines ---------------------------------------------------

VelocityField upsample_trilinear_baseline(const VelocityField& lr) {
    const Vec3i& d = lr.grid.dims;
    for (int a = 0; a < 3; ++a)
        if (d[a] < 2) throw ValidationError("trilinear baseline: dims must be >= 2");
    Grid3 hr{{2 * d[0], 2 * d[1], 2 * d[2]},
             {lr.grid.spacing_mm[0] / 2, lr.grid.spacing_mm[1] / 2, lr.grid.spacing_mm[2] / 2}};
    VelocityField out(hr);
    // dims are (x,y,z) with x fastest; the shared kernel treats them as
    // (d,h,w) with w fastest, so pass them reversed
    const Vec3i rev{d[2], d[1], d[0]};
    for (int c = 0; c < 3; ++c)
        trilinear2x_channel(lr.v[std::size_t(c)].data(), rev, out.v[std::size_t(c)].data());
    return out;
}

namespace {

// 4-tap Lagrange cubic weights at fractional offset t within [0,1), for
// samples at relative positions {-1, 0, 1, 2}
inline std::array<double, 4> lagrange_cubic_weights(double t) {
    return {-t * (t - 1.0) * (t - 2.0) / 6.0, (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -t * (t + 1.0) * (t - 2.0) / 2.0, t * (t + 1.0) * (t - 1.0) / 6.0};
}

struct CubicTap {
    std::array<int, 4> idx;
    std::array<double, 4> w;
};

std::vector<CubicTap> cubic_taps(int n_in) {
    std::vector<CubicTap> taps(std::size_t(2 * n_in));
    for (int i = 0; i < 2 * n_in; ++i) {
        double c = 0.5 * i - 0.25;
        double f = std::floor(c);
        int i0 = int(f);
        auto w = lagrange_cubic_weights(c - f);
        CubicTap tap;
        for (int k = 0; k < 4; ++k) {
            tap.idx[std::size_t(k)] = std::clamp(i0 - 1 + k, 0, n_in - 1);
            tap.w[std::size_t(k)] = w[std::size_t(k)];
        }
        taps[std::size_t(i)] = tap;
    }
    return taps;
}

} // namespace

VelocityField upsample_tricubic_baseline(const VelocityField& lr) {
    const Vec3i& d = lr.grid.dims;
    for (int a = 0; a < 3; ++a)
        if (d[a] < 4) throw ValidationError("tricubic baseline: dims must be >= 4");
    Grid3 hr{{2 * d[0], 2 * d[1], 2 * d[2]},
             {lr.grid.spacing_mm[0] / 2, lr.grid.spacing_mm[1] / 2, lr.grid.spacing_mm[2] / 2}};
    VelocityField out(hr);

    const auto tx = cubic_taps(d[0]), ty = cubic_taps(d[1]), tz = cubic_taps(d[2]);
    for (int c = 0; c < 3; ++c) {
        const VolumeD& in = lr.v[std::size_t(c)];
        VolumeD& o = out.v[std::size_t(c)];
        for (int k = 0; k < 2 * d[2]; ++k) {
            const auto& az = tz[std::size_t(k)];
            for (int j = 0; j < 2 * d[1]; ++j) {
                const auto& ay = ty[std::size_t(j)];
                for (int i = 0; i < 2 * d[0]; ++i) {
                    const auto& ax = tx[std::size_t(i)];
                    double acc = 0.0;
                    for (int zz = 0; zz < 4; ++zz)
                        for (int yy = 0; yy < 4; ++yy) {
                            double wzy = az.w[std::size_t(zz)] * ay.w[std::size_t(yy)];
                            const double* line =
                                in.data() +
                                in.index(0, ay.idx[std::size_t(yy)], az.idx[std::size_t(zz)]);
                            double lx = 0.0;
                            for (int xx = 0; xx < 4; ++xx)
                                lx += ax.w[std::size_t(xx)] * line[ax.idx[std::size_t(xx)]];
                            acc += wzy * lx;
                        }
                    o(i, j, k) = acc;
                }
            }
        }
    }
    return out;
}

std::string MetricReport::to_json() const {
    json j;
    j["frame"] = frame;
    j["method"] = method;
    j["rel_speed_error_mean"] = rel_speed_error_mean;
    j["flow_rates_ml_s"] = flow_rates_ml_s;
    j["truth_flow_rates_ml_s"] = truth_flow_rates_ml_s;
    json errs = json::array();
    for (const auto& e : flow_rate_errors)
        errs.push_back({{"diff_ml_s", e.diff_ml_s}, {"percent", e.percent}});
    j["flow_rate_errors"] = errs;
    j["divergence"] = {{"mean_abs", divergence.mean_abs},
                       {"max_abs", divergence.max_abs},
                       {"voxels", divergence.voxels}};
    json ba = json::array();
    for (const auto& b : bland_altman_per_component)
        ba.push_back({{"bias", b.bias}, {"sd", b.sd}, {"lo", b.lo}, {"hi", b.hi}});
    j["bland_altman"] = ba;
    return j.dump();
}

} // namespace flow4dsr
