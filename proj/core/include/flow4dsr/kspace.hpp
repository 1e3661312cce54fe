#pragma once

#include "flow4dsr/fft.hpp"
#include "flow4dsr/flowfield.hpp"
#include "flow4dsr/mrencode.hpp"
#include "flow4dsr/volume.hpp"

#include <cstdint>
#include <limits>

namespace flow4dsr {

/// Target SNR for frequency-domain noise. Infinity disables noise; the seed
/// pins the Gaussian stream so identical inputs give bit-identical outputs.
struct NoiseSpec {
    double target_snr_db = 15.0;
    std::uint64_t seed = 0;

    static NoiseSpec disabled() {
        return {std::numeric_limits<double>::infinity(), 0};
    }
    bool enabled() const { return std::isfinite(target_snr_db); }

    void validate() const;
};

/// Forward 3D FFT of a complex image volume (unnormalized).
ComplexVolume fft3(const ComplexVolume& vol);

/// Inverse 3D FFT scaled by 1/N.
ComplexVolume ifft3(const ComplexVolume& vol);

/// Mean |.|^2 over the volume.
double mean_power(const ComplexVolume& vol);

/// sigma = sqrt(px / 10^(snr_db/10)); sigma^2 is the total complex noise power.
double noise_sigma(double px, double target_snr_db);

/// Frequency-domain 2x downsampling with calibrated complex Gaussian noise:
/// FFT, keep the centered low-frequency block at half dims (scaled by 1/8 so
/// constants are preserved), measure signal power on the retained block, add
/// N(0, sigma^2/2) independently to real and imaginary parts of every
/// retained coefficient, inverse FFT. All HR dims must be even.
ComplexVolume downsample_with_noise(const ComplexVolume& hr, const NoiseSpec& noise);

/// 10*log10(P_signal / P_residual) with P the mean |.|^2; +infinity when the
/// residual power is zero.
double measure_snr_db(const ComplexVolume& signal_ks, const ComplexVolume& noisy_ks);

/// Zero-pad the centered k-space block to doubled dims (scaled by 8, the
/// inverse of the truncation scaling) and inverse transform.
ComplexVolume sinc_upsample(const ComplexVolume& lr, int factor = 2);

/// Per-component sinc interpolation of a real velocity field; the imaginary
/// residue of the padded spectrum is discarded.
VelocityField sinc_upsample(const VelocityField& lr, int factor = 2);

} // namespace flow4dsr
