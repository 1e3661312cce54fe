#include "flow4dsr/kspace.hpp"
#include "flow4dsr/errors.hpp"
#include "flow4dsr/rng.hpp"

#include <cmath>

namespace flow4dsr {

void NoiseSpec::validate() const {
    if (std::isnan(target_snr_db)) throw ValidationError("NoiseSpec: target_snr_db is NaN");
}

ComplexVolume fft3(const ComplexVolume& vol) {
    return {vol.grid, fft3(vol.data)};
}

ComplexVolume ifft3(const ComplexVolume& vol) {
    return {vol.grid, ifft3(vol.data)};
}

double mean_power(const ComplexVolume& vol) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < vol.data.size(); ++n) acc += std::norm(vol.data[n]);
    return acc / double(vol.data.size());
}

double noise_sigma(double px, double target_snr_db) {
    if (!(px > 0.0) || !std::isfinite(px))
        throw ValidationError("noise_sigma: signal power must be positive");
    if (std::isnan(target_snr_db)) throw ValidationError("noise_sigma: NaN target");
    return std::sqrt(px / std::pow(10.0, target_snr_db / 10.0));
}

namespace {

// Map an LR k-space index to its signed frequency, then to the HR index
// carrying that frequency. Centered (DC-in-middle) window convention.
inline int hr_bin(int lr_idx, int lr_dim, int hr_dim) {
    int s = lr_idx < lr_dim / 2 ? lr_idx : lr_idx - lr_dim;
    return s >= 0 ? s : s + hr_dim;
}

Grid3 half_grid(const Grid3& hr) {
    Grid3 lr;
    for (int a = 0; a < 3; ++a) {
        if (hr.dims[a] % 2 != 0)
            throw ValidationError("downsample: HR dims must be even, got " +
                                  std::to_string(hr.dims[a]) + " on axis " + std::to_string(a));
        lr.dims[a] = hr.dims[a] / 2;
        lr.spacing_mm[a] = hr.spacing_mm[a] * 2.0;
    }
    lr.validate();
    return lr;
}

Grid3 double_grid(const Grid3& lr) {
    Grid3 hr;
    for (int a = 0; a < 3; ++a) {
        hr.dims[a] = lr.dims[a] * 2;
        hr.spacing_mm[a] = lr.spacing_mm[a] * 0.5;
    }
    return hr;
}

} // namespace

ComplexVolume downsample_with_noise(const ComplexVolume& hr, const NoiseSpec& noise) {
    noise.validate();
    const Grid3 lr_grid = half_grid(hr.grid);

    Volume<cplx> ks = fft3(hr.data);

    // centered truncation; 1/8 amplitude scaling keeps constants constant
    ComplexVolume lr_ks(lr_grid);
    const Vec3i& ld = lr_grid.dims;
    const Vec3i& hd = hr.grid.dims;
    for (int k = 0; k < ld[2]; ++k) {
        int hk = hr_bin(k, ld[2], hd[2]);
        for (int j = 0; j < ld[1]; ++j) {
            int hj = hr_bin(j, ld[1], hd[1]);
            for (int i = 0; i < ld[0]; ++i) {
                int hi = hr_bin(i, ld[0], hd[0]);
                lr_ks.data(i, j, k) = ks(hi, hj, hk) * 0.125;
            }
        }
    }

    if (noise.enabled()) {
        // signal power measured on the block that actually receives noise
        double px = mean_power(lr_ks);
        double sigma = noise_sigma(px, noise.target_snr_db);
        double per_component = sigma / std::sqrt(2.0);
        Rng rng(noise.seed);
        for (std::int64_t n = 0; n < lr_ks.data.size(); ++n) {
            auto [g_re, g_im] = rng.normal_pair();
            lr_ks.data[n] += cplx(g_re * per_component, g_im * per_component);
        }
    }

    return {lr_grid, ifft3(lr_ks.data)};
}

double measure_snr_db(const ComplexVolume& signal_ks, const ComplexVolume& noisy_ks) {
    require_same_shape(signal_ks.data.dims(), noisy_ks.data.dims(), "measure_snr_db");
    double p_signal = mean_power(signal_ks);
    double p_residual = 0.0;
    for (std::int64_t n = 0; n < signal_ks.data.size(); ++n)
        p_residual += std::norm(noisy_ks.data[n] - signal_ks.data[n]);
    p_residual /= double(signal_ks.data.size());
    if (p_residual == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(p_signal / p_residual);
}

ComplexVolume sinc_upsample(const ComplexVolume& lr, int factor) {
    if (factor != 2) throw ValidationError("sinc_upsample: only factor 2 is supported");
    const Grid3 hr_grid = double_grid(lr.grid);

    Volume<cplx> ks = fft3(lr.data);

    ComplexVolume hr_ks(hr_grid);
    const Vec3i& ld = lr.grid.dims;
    const Vec3i& hd = hr_grid.dims;
    for (int k = 0; k < ld[2]; ++k) {
        int hk = hr_bin(k, ld[2], hd[2]);
        for (int j = 0; j < ld[1]; ++j) {
            int hj = hr_bin(j, ld[1], hd[1]);
            for (int i = 0; i < ld[0]; ++i) {
                int hi = hr_bin(i, ld[0], hd[0]);
                hr_ks.data(hi, hj, hk) = ks(i, j, k) * 8.0;
            }
        }
    }

    return {hr_grid, ifft3(hr_ks.data)};
}

VelocityField sinc_upsample(const VelocityField& lr, int factor) {
    if (factor != 2) throw ValidationError("sinc_upsample: only factor 2 is supported");
    VelocityField out(double_grid(lr.grid));
    for (int c = 0; c < 3; ++c) {
        ComplexVolume tmp(lr.grid);
        for (std::int64_t n = 0; n < tmp.data.size(); ++n)
            tmp.data[n] = cplx(lr.v[std::size_t(c)][n], 0.0);
        ComplexVolume up = sinc_upsample(tmp, 2);
        for (std::int64_t n = 0; n < up.data.size(); ++n)
            out.v[std::size_t(c)][n] = up.data[n].real();
    }
    return out;
}

} // namespace flow4dsr
