#pragma once

#include "flow4dsr/volume.hpp"

#include <complex>
#include <span>

namespace flow4dsr {

/// In-place 1D DFT of arbitrary length (iterative radix-2 for powers of two,
/// Bluestein otherwise). Forward is unnormalized; inverse divides by n.
void fft1d(std::span<cplx> data, bool inverse);

/// Unnormalized forward 3D DFT (separable, per axis).
Volume<cplx> fft3(const Volume<cplx>& vol);

/// Inverse 3D DFT scaled by 1/N with N the total voxel count.
Volume<cplx> ifft3(const Volume<cplx>& vol);

} // namespace flow4dsr
