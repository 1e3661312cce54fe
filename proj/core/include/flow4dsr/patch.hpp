#pragma once

#include "flow4dsr/volume.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace flow4dsr {

/// Randomized acquisition settings applied per frame during dataset
/// construction. VENC subset, intensity range and SNR range follow the
/// synthetic 4D-flow augmentation protocol.
struct AugmentationPolicy {
    std::vector<double> venc_choices{30, 60, 100, 150, 200, 250, 300}; // cm/s, ascending
    std::array<double, 2> intensity_range{60.0, 240.0};
    std::array<double, 2> snr_range_db{14.0, 17.0};
    std::uint64_t seed = 0;

    void validate() const;
};

/// One training sample: noisy LR velocity + anatomy patches and the clean
/// HR velocity target. Velocities are normalized by venc_max to [-1, 1],
/// magnitudes by 255 to [0, 1]. LR dims are exactly half the HR dims.
struct PatchPair {
    std::array<VolumeF, 3> lr_velocity;  // 16^3 each, normalized
    std::array<VolumeF, 3> lr_magnitude; // 16^3 each, normalized
    std::array<VolumeF, 3> hr_velocity;  // 32^3 each, normalized
    std::array<float, 3> venc{0, 0, 0};  // cm/s, per component
    float fluid_fraction = 0.0f;         // LR fluid voxel fraction in [0,1]

    float venc_max() const {
        return std::max(venc[0], std::max(venc[1], venc[2]));
    }
    void validate() const;
};

} // namespace flow4dsr
