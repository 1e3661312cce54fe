#pragma once

#include "flow4dsr/container.hpp"
#include "flow4dsr/flowfield.hpp"
#include "flow4dsr/patch.hpp"
#include "flow4dsr/rng.hpp"
#include "flow4dsr/volume.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flow4dsr {

/// Acquisition settings drawn for one frame.
struct FrameAugmentation {
    Vec3d venc;        // cm/s per component
    double intensity;  // fluid magnitude in [60, 240]
    double snr_db;     // target SNR in [14, 17]
};

/// Draw per-frame VENC / intensity / SNR. Per component the VENC is uniform
/// over the policy choices strictly above that component's max |v|.
/// Deterministic given (policy.seed, draw_index).
FrameAugmentation sample_augmentation(const AugmentationPolicy& policy,
                                      const Vec3d& frame_max_speed,
                                      std::uint64_t draw_index);

struct PatchOrigins {
    std::vector<Vec3i> origins; // accepted origins, constrained ones first
    int failed_constrained = 0; // constrained draws that hit the attempt cap
};

/// Select n patch origins on the LR grid: the first n-1 must contain at
/// least `min_fluid` fluid fraction (rejection sampling, 1000 attempts
/// each), the last is unconstrained. The HR patch is the doubled block at
/// the doubled origin. Throws unless `allow_partial` when a constrained
/// draw is unsatisfiable.
PatchOrigins extract_patches(const FluidMask& lr_mask, int patch_size, int n_patches,
                             double min_fluid, Rng& rng, const std::string& frame_label,
                             bool allow_partial = false);

/// Fluid fraction of the cube at `origin`.
double fluid_fraction(const FluidMask& mask, const Vec3i& origin, int size);

/// Right-angle rotation of a cubic patch about a coordinate axis. The voxel
/// grid and the velocity components are transformed by the same rotation
/// matrix; magnitudes rotate as scalars. `angle_deg` in {90, 180, 270}.
PatchPair rotate_patch(const PatchPair& pair, Axis axis, int angle_deg);

/// The nine augmentation rotations (3 axes x 3 angles, applied to the
/// original, not composed), in a fixed order: axis x/y/z, angle 90/180/270.
std::vector<PatchPair> rotation_variants(const PatchPair& original);

/// Scale raw velocities (cm/s) by 1/venc_max and magnitudes by 1/255 into a
/// normalized PatchPair. Requires |v| <= venc_max.
PatchPair normalize_pair(const std::array<VolumeD, 3>& lr_velocity_cm_s,
                         const std::array<VolumeD, 3>& lr_magnitude_raw,
                         const std::array<VolumeD, 3>& hr_velocity_cm_s,
                         const Vec3d& venc, double lr_fluid_fraction);

/// Crop `size^3` block at `origin` (float cast).
VolumeF crop(const VolumeD& vol, const Vec3i& origin, int size);

struct DatasetManifest {
    int format_version = 1;
    std::map<std::string, std::uint64_t> counts; // per split
    std::vector<std::string> source_frames;      // "source:frame" ids
    std::string policy_json;

    void save(const std::filesystem::path& path) const;
    static DatasetManifest load(const std::filesystem::path& path);
};

/// Persist records into an F4D1 patch container.
DatasetManifest write_dataset(const std::vector<PatchPair>& records,
                              const std::filesystem::path& path, ContainerHeader header);

/// Read back a full patch container with checksum verification.
std::vector<PatchPair> read_dataset(const std::filesystem::path& path);

/// JSON snapshot of an augmentation policy (stored in headers/manifests).
std::string policy_to_json(const AugmentationPolicy& policy);
AugmentationPolicy policy_from_json(const std::string& text);

} // namespace flow4dsr
