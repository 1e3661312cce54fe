#include "flow4dsr/infer.hpp"
#include "flow4dsr/errors.hpp"
#include "flow4dsr/log.hpp"
#include "flow4dsr/threading.hpp"

#include <chrono>
#include <cmath>

namespace flow4dsr {

PatchPlan plan_patches(const Vec3i& lr_dims, int patch_size) {
    if (patch_size < 8) throw ValidationError("plan_patches: patch size must be >= 8");
    for (int a = 0; a < 3; ++a)
        if (lr_dims[a] < patch_size)
            throw ValidationError("plan_patches: LR dim " + std::to_string(lr_dims[a]) +
                                  " smaller than patch size " + std::to_string(patch_size));

    PatchPlan plan;
    plan.patch_size = patch_size;
    plan.stride = patch_size - 4;
    plan.strip = 4;
    plan.lr_dims = lr_dims;
    for (int a = 0; a < 3; ++a) {
        auto& origins = plan.axis_origins[std::size_t(a)];
        for (int o = 0; o + patch_size <= lr_dims[a]; o += plan.stride) origins.push_back(o);
        if (origins.back() + patch_size < lr_dims[a])
            origins.push_back(lr_dims[a] - patch_size); // clamped final patch
    }
    for (int oz : plan.axis_origins[2])
        for (int oy : plan.axis_origins[1])
            for (int ox : plan.axis_origins[0]) plan.origins.push_back({ox, oy, oz});
    return plan;
}

PatchPredictor net_predictor(const Net<float>& net) {
    return [&net](const Tensor<float>& vel, const Tensor<float>& anat) {
        return net.forward(vel, anat);
    };
}

PatchPredictor trilinear_oracle_predictor() {
    return [](const Tensor<float>& vel, const Tensor<float>&) {
        return upsample_trilinear2x(vel);
    };
}

namespace {

Tensor<float> gather_patch(const std::array<VolumeF, 3>& vols, const Vec3i& origin, int n) {
    Tensor<float> t({1, 3, n, n, n});
    const std::int64_t ch = t.channel_size();
    for (int c = 0; c < 3; ++c) {
        float* dst = t.data.data() + c * ch;
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < n; ++i)
                    *dst++ = vols[std::size_t(c)](origin[0] + i, origin[1] + j, origin[2] + k);
    }
    return t;
}

} // namespace

StitchedVolume predict_volume(const std::array<VolumeD, 3>& lr_velocity_cm_s,
                              const std::array<VolumeD, 3>& lr_magnitude_raw,
                              const Vec3d& venc, const Grid3& lr_grid,
                              const PatchPredictor& predictor, const PatchPlan& plan) {
    for (int c = 0; c < 3; ++c) {
        require_same_shape(lr_velocity_cm_s[std::size_t(c)].dims(), lr_grid.dims,
                           "predict_volume velocity");
        require_same_shape(lr_magnitude_raw[std::size_t(c)].dims(), lr_grid.dims,
                           "predict_volume magnitude");
    }
    if (plan.lr_dims != lr_grid.dims)
        throw ValidationError("predict_volume: plan was built for different LR dims");

    const double venc_max = std::max(venc[0], std::max(venc[1], venc[2]));
    if (!(venc_max > 0.0)) throw ValidationError("predict_volume: venc_max must be positive");

    // normalize once, full volume
    std::array<VolumeF, 3> vel_n, mag_n;
    for (int c = 0; c < 3; ++c) {
        vel_n[std::size_t(c)] = VolumeF(lr_grid.dims);
        mag_n[std::size_t(c)] = VolumeF(lr_grid.dims);
        const auto& v = lr_velocity_cm_s[std::size_t(c)];
        const auto& m = lr_magnitude_raw[std::size_t(c)];
        for (std::int64_t i = 0; i < v.size(); ++i) {
            if (std::abs(v[i]) > venc_max * (1.0 + 1e-9))
                throw ValidationError("predict_volume: |v| exceeds venc_max");
            vel_n[std::size_t(c)][i] = float(v[i] / venc_max);
            mag_n[std::size_t(c)][i] = float(std::clamp(m[i] / 255.0, 0.0, 1.0));
        }
    }
    auto anat = compute_anatomy_channels<float>(mag_n, vel_n);

    const int n = plan.patch_size;
    const int n_patches = int(plan.origins.size());
    std::vector<Tensor<float>> sr_patches(std::size_t(n_patches));
    parallel_for(n_patches, [&](int pi) {
        const Vec3i& o = plan.origins[std::size_t(pi)];
        Tensor<float> vel_t = gather_patch(vel_n, o, n);
        Tensor<float> anat_t({1, 3, n, n, n});
        const std::int64_t ch = anat_t.channel_size();
        for (int c = 0; c < 3; ++c) {
            float* dst = anat_t.data.data() + c * ch;
            for (int k = 0; k < n; ++k)
                for (int j = 0; j < n; ++j)
                    for (int i = 0; i < n; ++i)
                        *dst++ = anat[std::size_t(c)](o[0] + i, o[1] + j, o[2] + k);
        }
        Tensor<float> sr = predictor(vel_t, anat_t);
        if (sr.spatial() != Vec3i{2 * n, 2 * n, 2 * n} || sr.shape[1] != 3)
            throw ValidationError("predict_volume: predictor output has wrong shape");
        sr_patches[std::size_t(pi)] = std::move(sr);
    });

    Grid3 sr_grid;
    for (int a = 0; a < 3; ++a) {
        sr_grid.dims[a] = 2 * lr_grid.dims[a];
        sr_grid.spacing_mm[a] = lr_grid.spacing_mm[a] * 0.5;
    }
    StitchedVolume out{VelocityField(sr_grid), Volume<std::int32_t>(sr_grid.dims, -1),
                       Volume<std::uint16_t>(sr_grid.dims, 0)};

    // sequential stitch in plan order: later patches own disputed voxels
    for (int pi = 0; pi < n_patches; ++pi) {
        const Vec3i& o = plan.origins[std::size_t(pi)];
        const Tensor<float>& sr = sr_patches[std::size_t(pi)];
        const std::int64_t ch = sr.channel_size();
        Vec3i lo, hi; // retained SR region, global coordinates
        for (int a = 0; a < 3; ++a) {
            lo[a] = o[a] == 0 ? 0 : 2 * o[a] + plan.strip;
            hi[a] = o[a] + n == lr_grid.dims[a] ? 2 * (o[a] + n) : 2 * o[a] + 2 * n - plan.strip;
        }
        for (int k = lo[2]; k < hi[2]; ++k)
            for (int j = lo[1]; j < hi[1]; ++j)
                for (int i = lo[0]; i < hi[0]; ++i) {
                    const int li = i - 2 * o[0], lj = j - 2 * o[1], lk = k - 2 * o[2];
                    const std::int64_t local =
                        (std::int64_t(lk) * 2 * n + lj) * 2 * n + li;
                    for (int c = 0; c < 3; ++c)
                        out.field.v[std::size_t(c)](i, j, k) =
                            double(sr.data[std::size_t(c * ch + local)]) * venc_max;
                    out.provenance(i, j, k) = pi;
                    ++out.writes(i, j, k);
                }
    }

    for (std::int64_t i = 0; i < out.writes.size(); ++i)
        if (out.writes[i] == 0)
            throw NumericError("predict_volume: stitching left uncovered SR voxels (bug)");

    return out;
}

UpsampleResult upsample_full(const std::array<VolumeD, 3>& lr_velocity_cm_s,
                             const std::array<VolumeD, 3>& lr_magnitude_raw,
                             const Vec3d& venc, const Grid3& lr_grid,
                             const PatchPredictor& predictor, int patch_size) {
    const auto t0 = std::chrono::steady_clock::now();
    PatchPlan plan = plan_patches(lr_grid.dims, patch_size);
    StitchedVolume stitched =
        predict_volume(lr_velocity_cm_s, lr_magnitude_raw, venc, lr_grid, predictor, plan);
    const auto t1 = std::chrono::steady_clock::now();
    UpsampleResult out{std::move(stitched), std::chrono::duration<double>(t1 - t0).count()};
    log::info("upsample_full: " + std::to_string(plan.origins.size()) + " patches in " +
              std::to_string(out.seconds) + " s");
    return out;
}

} // namespace flow4dsr
