#pragma once

#include "flow4dsr/flowfield.hpp"
#include "flow4dsr/net.hpp"
#include "flow4dsr/tensor.hpp"

#include <functional>
#include <vector>

namespace flow4dsr {

/// Overlapping patch tiling for full-volume prediction: LR origins advance
/// with stride n-4 per axis (final origin clamped to dim-n) and 4 SR voxels
/// are stripped from every patch border except faces on the volume boundary.
struct PatchPlan {
    int patch_size = 32;
    int stride = 28; // patch_size - 4
    int strip = 4;   // SR voxels stripped per interior border
    Vec3i lr_dims{0, 0, 0};
    std::array<std::vector<int>, 3> axis_origins;
    std::vector<Vec3i> origins; // cartesian product, x fastest
};

PatchPlan plan_patches(const Vec3i& lr_dims, int patch_size);

/// Maps a normalized LR patch (velocity, anatomy; each (1,3,n,n,n)) to the
/// super-resolved normalized velocity patch (1,3,2n,2n,2n).
using PatchPredictor = std::function<Tensor<float>(const Tensor<float>&, const Tensor<float>&)>;

PatchPredictor net_predictor(const Net<float>& net);

/// Exact trilinear 2x of the velocity channels; ignores anatomy. Used as the
/// stitching-mechanics oracle in tests.
PatchPredictor trilinear_oracle_predictor();

struct StitchedVolume {
    VelocityField field;              // cm/s at 2x LR dims
    Volume<std::int32_t> provenance;  // final owning patch index per SR voxel
    Volume<std::uint16_t> writes;     // assignment count per SR voxel
};

/// Predict every patch of `plan` and stitch the retained regions into a full
/// SR volume. Inputs are raw LR data (velocity cm/s, magnitudes in signal
/// units); normalization by venc_max / 255 and denormalization of the output
/// happen inside. Throws on coverage gaps (internal invariant).
StitchedVolume predict_volume(const std::array<VolumeD, 3>& lr_velocity_cm_s,
                              const std::array<VolumeD, 3>& lr_magnitude_raw,
                              const Vec3d& venc, const Grid3& lr_grid,
                              const PatchPredictor& predictor, const PatchPlan& plan);

struct UpsampleResult {
    StitchedVolume stitched;
    double seconds = 0.0;
};

/// plan_patches + predict_volume + timing.
UpsampleResult upsample_full(const std::array<VolumeD, 3>& lr_velocity_cm_s,
                             const std::array<VolumeD, 3>& lr_magnitude_raw,
                             const Vec3d& venc, const Grid3& lr_grid,
                             const PatchPredictor& predictor, int patch_size);

} // namespace flow4dsr
