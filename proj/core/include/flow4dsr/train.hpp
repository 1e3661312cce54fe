#pragma once

#include "flow4dsr/net.hpp"
#include "flow4dsr/patch.hpp"
#include "flow4dsr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace flow4dsr {

/// l_total = l_mse + vg_weight * l_vg
struct LossBreakdown {
    double l_mse = 0.0;
    double l_vg = 0.0;
    double l_total = 0.0;
    double vg_weight = 1e-3;
};

struct TrainConfig {
    double lr0 = 1e-4;
    double decay_factor = 1.4142135623730951; // sqrt(2), applied as a divisor
    int decay_every = 10000;
    int batch = 20;
    int max_iters = 1000;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int val_every = 500;

    void validate() const;
};

/// Mean over voxels of the summed squared component errors.
template <typename T>
double loss_mse(const Tensor<T>& pred, const Tensor<T>& target);

/// Mean over voxels of the squared mismatch of the three diagonal velocity
/// derivatives (dvx/dx, dvy/dy, dvz/dz). Central differences
/// (v[k+1] - v[k-1]) / (2*spacing) inside, one-sided at the boundaries.
template <typename T>
double loss_velocity_gradient(const Tensor<T>& pred, const Tensor<T>& target,
                              const Vec3d& spacing_mm);

template <typename T>
LossBreakdown total_loss(const Tensor<T>& pred, const Tensor<T>& target,
                         const Vec3d& spacing_mm, double vg_weight = 1e-3);

/// Loss plus the analytic gradient of l_total w.r.t. pred.
template <typename T>
LossBreakdown total_loss_grad(const Tensor<T>& pred, const Tensor<T>& target,
                              const Vec3d& spacing_mm, Tensor<T>& grad,
                              double vg_weight = 1e-3);

/// Gradient of l_vg alone (used by the gradient-check suites).
template <typename T>
double loss_velocity_gradient_grad(const Tensor<T>& pred, const Tensor<T>& target,
                                   const Vec3d& spacing_mm, Tensor<T>& grad);

/// First-moment/second-moment state for Adam.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m, v;
    std::int64_t t = 0;

    static AdamState init(const ModelParameters<T>& params) {
        AdamState s;
        for (auto& p : params.tensors) {
            s.m.emplace_back(std::size_t(p.numel()), T(0));
            s.v.emplace_back(std::size_t(p.numel()), T(0));
        }
        return s;
    }
};

/// One bias-corrected Adam update. Throws NumericError on non-finite
/// gradients, naming the offending tensor.
template <typename T>
void adam_step(ModelParameters<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               double lr, const TrainConfig& cfg);

/// lr0 / decay_factor^floor(iteration / decay_every)
double lr_at(std::int64_t iteration, const TrainConfig& cfg);

/// Voxel-weighted masked relative speed error of net predictions over a
/// patch set, in physical units (cm/s). The fluid mask is recovered from
/// the clean HR target (speed > 0: velocity is exactly zero outside the
/// fluid by construction).
double masked_rel_speed_error(const Net<float>& net, const std::vector<PatchPair>& patches,
                              double epsilon = 1e-5);

struct TrainResult {
    std::vector<LossBreakdown> steps;          // one record per iteration
    std::vector<std::pair<std::int64_t, double>> val_history; // (iter, rel err)
    std::int64_t best_iteration = -1;
    double best_val_metric = 0.0;
    std::int64_t iterations_run = 0;
};

/// Seeded shuffled batches; per step: forward, total loss, backward, Adam
/// with the decayed learning rate. Periodically evaluates the validation
/// relative speed error and persists the best checkpoint. Writes one
/// tab-separated log record per step: iter lr l_mse l_vg l_total.
TrainResult train_loop(const std::vector<PatchPair>& train_patches,
                       const std::vector<PatchPair>& val_patches, Net<float>& net,
                       const TrainConfig& cfg, const Vec3d& hr_spacing_mm,
                       const std::filesystem::path& checkpoint_path,
                       std::ostream* step_log = nullptr, std::ostream* val_log = nullptr);

} // namespace flow4dsr
