#pragma once

#include "flow4dsr/errors.hpp"
#include "flow4dsr/volume.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace flow4dsr {

/// Dense 5D tensor (batch, channels, depth, height, width), w fastest.
template <typename T>
struct Tensor {
    std::array<int, 5> shape{0, 0, 0, 0, 0};
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::array<int, 5> s, T fill = T{}) : shape(s) {
        for (int d : s)
            if (d < 1) throw ValidationError("Tensor: all dims must be >= 1");
        data.assign(std::size_t(numel()), fill);
    }

    std::int64_t numel() const {
        return std::int64_t(shape[0]) * shape[1] * shape[2] * shape[3] * shape[4];
    }
    std::int64_t sample_size() const {
        return std::int64_t(shape[1]) * shape[2] * shape[3] * shape[4];
    }
    std::int64_t channel_size() const {
        return std::int64_t(shape[2]) * shape[3] * shape[4];
    }

    T* sample(int n) { return data.data() + n * sample_size(); }
    const T* sample(int n) const { return data.data() + n * sample_size(); }

    Vec3i spatial() const { return {shape[2], shape[3], shape[4]}; }

    T& at(int n, int c, int d, int h, int w) {
        return data[std::size_t(
            (((std::int64_t(n) * shape[1] + c) * shape[2] + d) * shape[3] + h) * shape[4] + w)];
    }
    const T& at(int n, int c, int d, int h, int w) const {
        return const_cast<Tensor*>(this)->at(n, c, d, h, w);
    }
};

template <typename T>
struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> data;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }
};

/// Ordered, named learnable tensors. Declaration order is the serialization
/// order of the checkpoint format.
template <typename T>
struct ModelParameters {
    std::vector<NamedTensor<T>> tensors;

    NamedTensor<T>& add(std::string name, std::vector<int> shape) {
        NamedTensor<T> t;
        t.name = std::move(name);
        t.shape = std::move(shape);
        t.data.assign(std::size_t(t.numel()), T{});
        tensors.push_back(std::move(t));
        return tensors.back();
    }

    std::int64_t total_size() const {
        std::int64_t n = 0;
        for (auto& t : tensors) n += t.numel();
        return n;
    }
};

/// Per-parameter-tensor gradient buffers, same shapes as ModelParameters.
template <typename T>
struct Gradients {
    std::vector<std::vector<T>> g;

    template <typename U>
    static Gradients zeros_like(const ModelParameters<U>& params) {
        Gradients out;
        out.g.reserve(params.tensors.size());
        for (auto& t : params.tensors) out.g.emplace_back(std::size_t(t.numel()), T{});
        return out;
    }

    void accumulate(const Gradients& other) {
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < g[i].size(); ++j) g[i][j] += other.g[i][j];
    }

    void scale(T s) {
        for (auto& v : g)
            for (auto& x : v) x *= s;
    }
};

} // namespace flow4dsr
