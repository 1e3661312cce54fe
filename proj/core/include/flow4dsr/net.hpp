#pragma once

#include "flow4dsr/layers.hpp"
#include "flow4dsr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace flow4dsr {

/// Architecture hyperparameters. Defaults follow the reference design:
/// eight residual blocks in LR space, four in HR space, 3^3 kernels,
/// trilinear 2x upsampling between the two stages.
struct NetConfig {
    int base_filters = 64;
    int lr_resblocks = 8;
    int hr_resblocks = 4;
    double leaky_slope = 0.2;
    int kernel = 3; // per axis; only 3 is supported

    void validate() const;
};

/// mag = |m|, speed = |v|, pcmra = mag * speed, elementwise over components.
/// Works on any matching trio of volumes (normalized or raw).
template <typename T>
std::array<Volume<T>, 3> compute_anatomy_channels(const std::array<Volume<T>, 3>& mags,
                                                  const std::array<Volume<T>, 3>& vels);

/// Residual super-resolution network with two input paths (velocity and
/// anatomy), trilinear 2x upsampling, and three tanh-bounded prediction
/// branches. Accepts any cube size n >= 8 and outputs a (2n)^3 cube.
template <typename T>
class Net {
public:
    Net(NetConfig config, std::uint64_t init_seed);
    Net(NetConfig config, ModelParameters<T> params);

    const NetConfig& config() const { return config_; }
    const ModelParameters<T>& params() const { return params_; }
    ModelParameters<T>& params() { return params_; }

    /// Recorded activations of one forward pass, consumed by backward().
    struct Trace {
        Tensor<T> x_vel, x_anat;
        Tensor<T> entry_vel, entry_anat; // post-ReLU
        Tensor<T> fused;                 // post-ReLU
        std::vector<Tensor<T>> rb_in_lr, rb_mid_lr; // block input, post-leaky-ReLU
        Tensor<T> upsampled;
        std::vector<Tensor<T>> rb_in_hr, rb_mid_hr;
        Tensor<T> hr_final;
        std::vector<Tensor<T>> branch_mid; // post-ReLU, per branch
        std::vector<Tensor<T>> branch_out; // post-tanh, per branch
    };

    /// Inputs: (N, 3, n, n, n) velocity in [-1,1] and anatomy channels
    /// (mag, speed, pcmra). Output: (N, 3, 2n, 2n, 2n), strictly in (-1,1).
    Tensor<T> forward(const Tensor<T>& velocity, const Tensor<T>& anatomy) const;

    Tensor<T> forward(const Tensor<T>& velocity, const Tensor<T>& anatomy, Trace& trace) const;

    /// Accumulate parameter gradients (+=) for dLoss/dOutput `grad_out`.
    void backward(const Trace& trace, const Tensor<T>& grad_out, Gradients<T>& grads) const;

    /// Convert parameters to another scalar type (float64 gradient checks).
    template <typename U>
    ModelParameters<U> params_as() const {
        ModelParameters<U> out;
        for (const auto& t : params_.tensors) {
            auto& nt = out.add(t.name, t.shape);
            for (std::size_t i = 0; i < t.data.size(); ++i) nt.data[i] = U(t.data[i]);
        }
        return out;
    }

private:
    struct ConvRef {
        std::string name;
        int c_in = 0, c_out = 0;
        int w_index = 0, b_index = 0; // indices into params_.tensors
    };

    void build_layout();
    const T* weight(const ConvRef& c) const { return params_.tensors[std::size_t(c.w_index)].data.data(); }
    const T* bias(const ConvRef& c) const { return params_.tensors[std::size_t(c.b_index)].data.data(); }

    NetConfig config_;
    ModelParameters<T> params_;
    ConvRef entry_vel_, entry_anat_, fuse_;
    std::vector<std::array<ConvRef, 2>> lr_rb_, hr_rb_;
    std::vector<std::array<ConvRef, 2>> branch_; // conv1, out
};

/// "F4DW" checkpoint: magic, u32 header length, JSON (config, iteration,
/// validation metric, tensor names/shapes), float32 blobs in declaration order.
struct Checkpoint {
    NetConfig config;
    ModelParameters<float> params;
    std::int64_t iteration = 0;
    double validation_metric = 0.0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

extern template class Net<float>;
extern template class Net<double>;

} // namespace flow4dsr
