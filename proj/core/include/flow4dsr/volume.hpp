#pragma once

#include "flow4dsr/errors.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace flow4dsr {

using Vec3i = std::array<int, 3>;
using Vec3d = std::array<double, 3>;

/// Uniform 3D sampling grid. `spacing_mm` is the voxel pitch per axis.
struct Grid3 {
    Vec3i dims{0, 0, 0};
    Vec3d spacing_mm{0.594, 0.594, 0.594};

    Grid3() = default;
    Grid3(Vec3i d, Vec3d s) : dims(d), spacing_mm(s) { validate(); }
    Grid3(Vec3i d, double iso) : dims(d), spacing_mm{iso, iso, iso} { validate(); }

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] < 4)
                throw ValidationError("Grid3: dims must be >= 4 per axis, got " +
                                      std::to_string(dims[a]));
            if (!(spacing_mm[a] > 0.0) || !std::isfinite(spacing_mm[a]))
                throw ValidationError("Grid3: spacing must be positive and finite");
        }
    }

    std::int64_t voxels() const {
        return std::int64_t(dims[0]) * dims[1] * dims[2];
    }
    bool operator==(const Grid3& o) const = default;
};

/// Dense 3D array, x-fastest layout: index(i,j,k) = (k*ny + j)*nx + i.
template <typename T>
class Volume {
public:
    Volume() = default;
    explicit Volume(Vec3i dims, T fill = T{})
        : dims_(dims), data_(std::size_t(std::int64_t(dims[0]) * dims[1] * dims[2]), fill) {}

    const Vec3i& dims() const { return dims_; }
    std::int64_t size() const { return std::int64_t(data_.size()); }

    T& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
    const T& operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }
    T& operator[](std::int64_t n) { return data_[std::size_t(n)]; }
    const T& operator[](std::int64_t n) const { return data_[std::size_t(n)]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    std::size_t index(int i, int j, int k) const {
        return std::size_t((std::int64_t(k) * dims_[1] + j) * dims_[0] + i);
    }

    bool same_shape(const Volume& o) const { return dims_ == o.dims_; }
    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Volume& o) const = default;

private:
    Vec3i dims_{0, 0, 0};
    std::vector<T> data_;
};

using VolumeD = Volume<double>;
using VolumeF = Volume<float>;
using cplx = std::complex<double>;

inline void require_same_shape(const Vec3i& a, const Vec3i& b, const char* what) {
    if (a != b)
        throw ValidationError(std::string(what) + ": shape mismatch");
}

} // namespace flow4dsr
