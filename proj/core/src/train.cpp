#include "flow4dsr/train.hpp"
#include "flow4dsr/errors.hpp"
#include "flow4dsr/rng.hpp"
#include "flow4dsr/threading.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace flow4dsr {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ValidationError("TrainConfig: lr0 must be > 0");
    if (batch < 1) throw ValidationError("TrainConfig: batch must be >= 1");
    if (max_iters < 1) throw ValidationError("TrainConfig: max_iters must be >= 1");
    if (decay_every < 1) throw ValidationError("TrainConfig: decay_every must be >= 1");
    if (!(decay_factor >= 1.0)) throw ValidationError("TrainConfig: decay_factor must be >= 1");
    if (val_every < 1) throw ValidationError("TrainConfig: val_every must be >= 1");
}

namespace {

template <typename T>
void check_cubes(const Tensor<T>& pred, const Tensor<T>& target, int min_side) {
    if (pred.shape != target.shape) throw ValidationError("loss: shape mismatch");
    if (pred.shape[1] != 3) throw ValidationError("loss: expected 3 channels");
    const Vec3i d = pred.spatial();
    if (d[0] < min_side || d[1] < min_side || d[2] < min_side)
        throw ValidationError("loss: cube side must be >= " + std::to_string(min_side));
}

// Diagonal derivative of channel c along spatial axis c. Central differences
// over 2*spacing inside, one-sided over spacing at the two boundary planes.
// dims/strides are those of one channel volume (d,h,w), w fastest.
template <typename T>
void diff_axis(const T* in, T* out, const Vec3i& d, int axis, double spacing) {
    const std::int64_t strides[3] = {std::int64_t(d[1]) * d[2], d[2], 1};
    const std::int64_t s = strides[axis];
    const int n = d[axis];
    const T inv2 = T(1.0 / (2.0 * spacing));
    const T inv1 = T(1.0 / spacing);
    const int c1 = (axis + 1) % 3, c2 = (axis + 2) % 3;
    for (int a = 0; a < d[c1]; ++a) {
        for (int b = 0; b < d[c2]; ++b) {
            std::int64_t base = a * strides[c1] + b * strides[c2];
            out[base] = (in[base + s] - in[base]) * inv1;
            for (int i = 1; i < n - 1; ++i)
                out[base + i * s] = (in[base + (i + 1) * s] - in[base + (i - 1) * s]) * inv2;
            out[base + (n - 1) * s] =
                (in[base + (n - 1) * s] - in[base + (n - 2) * s]) * inv1;
        }
    }
}

// Adjoint of diff_axis: out += D^T * in.
template <typename T>
void diff_axis_adjoint_add(const T* in, T* out, const Vec3i& d, int axis, double spacing) {
    const std::int64_t strides[3] = {std::int64_t(d[1]) * d[2], d[2], 1};
    const std::int64_t s = strides[axis];
    const int n = d[axis];
    const T inv2 = T(1.0 / (2.0 * spacing));
    const T inv1 = T(1.0 / spacing);
    const int c1 = (axis + 1) % 3, c2 = (axis + 2) % 3;
    for (int a = 0; a < d[c1]; ++a) {
        for (int b = 0; b < d[c2]; ++b) {
            std::int64_t base = a * strides[c1] + b * strides[c2];
            // row 0: (in[1] - in[0]) / h
            out[base] -= in[base] * inv1;
            out[base + s] += in[base] * inv1;
            for (int i = 1; i < n - 1; ++i) {
                out[base + (i + 1) * s] += in[base + i * s] * inv2;
                out[base + (i - 1) * s] -= in[base + i * s] * inv2;
            }
            out[base + (n - 1) * s] += in[base + (n - 1) * s] * inv1;
            out[base + (n - 2) * s] -= in[base + (n - 1) * s] * inv1;
        }
    }
}

} // namespace

template <typename T>
double loss_mse(const Tensor<T>& pred, const Tensor<T>& target) {
    check_cubes(pred, target, 1);
    const double voxels = double(pred.numel() / 3); // per-voxel sum over components
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        double d = double(pred.data[i]) - double(target.data[i]);
        acc += d * d;
    }
    return acc / voxels;
}

template <typename T>
double loss_velocity_gradient(const Tensor<T>& pred, const Tensor<T>& target,
                              const Vec3d& spacing_mm) {
    check_cubes(pred, target, 3);
    const Vec3i d = pred.spatial();
    const std::int64_t ch = pred.channel_size();
    std::vector<T> dp(std::size_t(ch)), dt(std::size_t(ch));
    double acc = 0.0;
    for (int n = 0; n < pred.shape[0]; ++n) {
        for (int c = 0; c < 3; ++c) {
            diff_axis(pred.sample(n) + c * ch, dp.data(), d, c, spacing_mm[std::size_t(c)]);
            diff_axis(target.sample(n) + c * ch, dt.data(), d, c, spacing_mm[std::size_t(c)]);
            for (std::int64_t i = 0; i < ch; ++i) {
                double e = double(dp[std::size_t(i)]) - double(dt[std::size_t(i)]);
                acc += e * e;
            }
        }
    }
    return acc / double(std::int64_t(pred.shape[0]) * ch);
}

template <typename T>
LossBreakdown total_loss(const Tensor<T>& pred, const Tensor<T>& target,
                         const Vec3d& spacing_mm, double vg_weight) {
    LossBreakdown out;
    out.vg_weight = vg_weight;
    out.l_mse = loss_mse(pred, target);
    out.l_vg = loss_velocity_gradient(pred, target, spacing_mm);
    out.l_total = out.l_mse + vg_weight * out.l_vg;
    return out;
}

template <typename T>
double loss_velocity_gradient_grad(const Tensor<T>& pred, const Tensor<T>& target,
                                   const Vec3d& spacing_mm, Tensor<T>& grad) {
    check_cubes(pred, target, 3);
    if (grad.shape != pred.shape) grad = Tensor<T>(pred.shape);
    std::fill(grad.data.begin(), grad.data.end(), T(0));

    const Vec3i d = pred.spatial();
    const std::int64_t ch = pred.channel_size();
    const double norm = 1.0 / double(std::int64_t(pred.shape[0]) * ch);
    std::vector<T> dp(std::size_t(ch)), dt(std::size_t(ch));
    double acc = 0.0;
    for (int n = 0; n < pred.shape[0]; ++n) {
        for (int c = 0; c < 3; ++c) {
            const double h = spacing_mm[std::size_t(c)];
            diff_axis(pred.sample(n) + c * ch, dp.data(), d, c, h);
            diff_axis(target.sample(n) + c * ch, dt.data(), d, c, h);
            for (std::int64_t i = 0; i < ch; ++i) {
                double e = double(dp[std::size_t(i)]) - double(dt[std::size_t(i)]);
                acc += e * e;
                dp[std::size_t(i)] = T(2.0 * norm * e);
            }
            diff_axis_adjoint_add(dp.data(), grad.sample(n) + c * ch, d, c, h);
        }
    }
    return acc * norm;
}

template <typename T>
LossBreakdown total_loss_grad(const Tensor<T>& pred, const Tensor<T>& target,
                              const Vec3d& spacing_mm, Tensor<T>& grad, double vg_weight) {
    LossBreakdown out;
    out.vg_weight = vg_weight;

    Tensor<T> vg_grad;
    out.l_vg = loss_velocity_gradient_grad(pred, target, spacing_mm, vg_grad);

    if (grad.shape != pred.shape) grad = Tensor<T>(pred.shape);
    const double voxels = double(pred.numel() / 3);
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        double d = double(pred.data[i]) - double(target.data[i]);
        acc += d * d;
        grad.data[i] = T(2.0 * d / voxels) + T(vg_weight) * vg_grad.data[i];
    }
    out.l_mse = acc / voxels;
    out.l_total = out.l_mse + vg_weight * out.l_vg;
    return out;
}

double lr_at(std::int64_t iteration, const TrainConfig& cfg) {
    if (iteration < 0) throw ValidationError("lr_at: negative iteration");
    const auto decays = iteration / cfg.decay_every;
    return cfg.lr0 / std::pow(cfg.decay_factor, double(decays));
}

template <typename T>
void adam_step(ModelParameters<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               double lr, const TrainConfig& cfg) {
    if (grads.g.size() != params.tensors.size() || state.m.size() != params.tensors.size())
        throw ValidationError("adam_step: mismatched parameter/gradient/state sizes");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
    for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
        auto& p = params.tensors[ti].data;
        const auto& g = grads.g[ti];
        auto& m = state.m[ti];
        auto& v = state.v[ti];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = double(g[i]);
            if (!std::isfinite(gi))
                throw NumericError("adam_step: non-finite gradient in tensor '" +
                                   params.tensors[ti].name + "'");
            double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
            double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = T(mi);
            v[i] = T(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            p[i] = T(double(p[i]) - lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
        }
    }
}

// ---- training-time metric ----------------------------------------------------

namespace {

Tensor<float> patch_velocity_tensor(const PatchPair& p) {
    const Vec3i d = p.lr_velocity[0].dims();
    Tensor<float> t({1, 3, d[0], d[1], d[2]});
    const std::int64_t ch = t.channel_size();
    for (int c = 0; c < 3; ++c)
        std::copy(p.lr_velocity[std::size_t(c)].data(),
                  p.lr_velocity[std::size_t(c)].data() + ch, t.data.data() + c * ch);
    return t;
}

Tensor<float> patch_anatomy_tensor(const PatchPair& p) {
    auto channels = compute_anatomy_channels<float>(p.lr_magnitude, p.lr_velocity);
    const Vec3i d = channels[0].dims();
    Tensor<float> t({1, 3, d[0], d[1], d[2]});
    const std::int64_t ch = t.channel_size();
    for (int c = 0; c < 3; ++c)
        std::copy(channels[std::size_t(c)].data(), channels[std::size_t(c)].data() + ch,
                  t.data.data() + c * ch);
    return t;
}

Tensor<float> patch_target_tensor(const PatchPair& p) {
    const Vec3i d = p.hr_velocity[0].dims();
    Tensor<float> t({1, 3, d[0], d[1], d[2]});
    const std::int64_t ch = t.channel_size();
    for (int c = 0; c < 3; ++c)
        std::copy(p.hr_velocity[std::size_t(c)].data(),
                  p.hr_velocity[std::size_t(c)].data() + ch, t.data.data() + c * ch);
    return t;
}

} // namespace

double masked_rel_speed_error(const Net<float>& net, const std::vector<PatchPair>& patches,
                              double epsilon) {
    if (patches.empty()) throw ValidationError("masked_rel_speed_error: empty patch set");
    std::vector<double> sums(patches.size(), 0.0);
    std::vector<std::int64_t> counts(patches.size(), 0);
    parallel_for(int(patches.size()), [&](int pi) {
        const PatchPair& p = patches[std::size_t(pi)];
        Tensor<float> pred = net.forward(patch_velocity_tensor(p), patch_anatomy_tensor(p));
        const double venc_max = double(p.venc_max());
        const std::int64_t ch = pred.channel_size();
        double acc = 0.0;
        std::int64_t cnt = 0;
        for (std::int64_t i = 0; i < ch; ++i) {
            double tx = double(p.hr_velocity[0][i]) * venc_max;
            double ty = double(p.hr_velocity[1][i]) * venc_max;
            double tz = double(p.hr_velocity[2][i]) * venc_max;
            double speed2 = tx * tx + ty * ty + tz * tz;
            if (speed2 <= 0.0) continue; // outside the fluid
            double ex = double(pred.data[std::size_t(i)]) * venc_max - tx;
            double ey = double(pred.data[std::size_t(ch + i)]) * venc_max - ty;
            double ez = double(pred.data[std::size_t(2 * ch + i)]) * venc_max - tz;
            acc += std::sqrt(ex * ex + ey * ey + ez * ez) / std::sqrt(speed2 + epsilon);
            ++cnt;
        }
        sums[std::size_t(pi)] = acc;
        counts[std::size_t(pi)] = cnt;
    });
    double total = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < sums.size(); ++i) {
        total += sums[i];
        n += counts[i];
    }
    if (n == 0) throw ValidationError("masked_rel_speed_error: no fluid voxels in patch set");
    return total / double(n);
}

// ---- training loop -------------------------------------------------------------

TrainResult train_loop(const std::vector<PatchPair>& train_patches,
                       const std::vector<PatchPair>& val_patches, Net<float>& net,
                       const TrainConfig& cfg, const Vec3d& hr_spacing_mm,
                       const std::filesystem::path& checkpoint_path,
                       std::ostream* step_log, std::ostream* val_log) {
    cfg.validate();
    if (train_patches.empty()) throw ValidationError("train_loop: empty training split");
    if (val_patches.empty()) throw ValidationError("train_loop: empty validation split");

    Rng shuffle_rng(mix_seed(cfg.seed, 0x7261696eULL)); // sub-stream for shuffles
    std::vector<int> perm(train_patches.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::size_t cursor = perm.size(); // forces a shuffle on first use
    auto next_index = [&] {
        if (cursor >= perm.size()) {
            for (std::size_t i = perm.size(); i > 1; --i)
                std::swap(perm[i - 1], perm[std::size_t(shuffle_rng.uniform_int(int(i)))]);
            cursor = 0;
        }
        return perm[cursor++];
    };

    AdamState<float> adam = AdamState<float>::init(net.params());
    TrainResult result;
    result.best_val_metric = std::numeric_limits<double>::infinity();

    std::vector<int> batch_idx(std::size_t(cfg.batch));
    std::vector<Gradients<float>> sample_grads(std::size_t(cfg.batch));
    std::vector<LossBreakdown> sample_loss(std::size_t(cfg.batch));

    auto run_validation = [&](std::int64_t iter) {
        double metric = masked_rel_speed_error(net, val_patches);
        result.val_history.emplace_back(iter, metric);
        if (metric < result.best_val_metric) {
            result.best_val_metric = metric;
            result.best_iteration = iter;
            save_checkpoint(checkpoint_path,
                            Checkpoint{net.config(), net.params(), iter, metric});
        }
        if (val_log)
            (*val_log) << iter << '\t' << metric << '\t' << result.best_iteration << '\n';
    };

    for (std::int64_t iter = 1; iter <= cfg.max_iters; ++iter) {
        for (int b = 0; b < cfg.batch; ++b) batch_idx[std::size_t(b)] = next_index();

        const double inv_batch = 1.0 / double(cfg.batch);
        parallel_for(cfg.batch, [&](int b) {
            const PatchPair& p = train_patches[std::size_t(batch_idx[std::size_t(b)])];
            Net<float>::Trace trace;
            Tensor<float> pred =
                net.forward(patch_velocity_tensor(p), patch_anatomy_tensor(p), trace);
            Tensor<float> target = patch_target_tensor(p);
            Tensor<float> grad;
            sample_loss[std::size_t(b)] = total_loss_grad(pred, target, hr_spacing_mm, grad);
            for (auto& g : grad.data) g = float(g * inv_batch); // batch-mean loss
            sample_grads[std::size_t(b)] = Gradients<float>::zeros_like(net.params());
            net.backward(trace, grad, sample_grads[std::size_t(b)]);
        });

        LossBreakdown mean;
        Gradients<float> grads = Gradients<float>::zeros_like(net.params());
        for (int b = 0; b < cfg.batch; ++b) {
            grads.accumulate(sample_grads[std::size_t(b)]);
            sample_grads[std::size_t(b)] = {}; // release per-sample buffers
            mean.l_mse += sample_loss[std::size_t(b)].l_mse * inv_batch;
            mean.l_vg += sample_loss[std::size_t(b)].l_vg * inv_batch;
            mean.l_total += sample_loss[std::size_t(b)].l_total * inv_batch;
        }

        if (!std::isfinite(mean.l_total))
            throw NumericError("train_loop: non-finite loss at iteration " +
                               std::to_string(iter) + " (best checkpoint retained)");

        const double lr = lr_at(iter - 1, cfg);
        adam_step(net.params(), grads, adam, lr, cfg);

        result.steps.push_back(mean);
        result.iterations_run = iter;
        if (step_log)
            (*step_log) << iter << '\t' << lr << '\t' << mean.l_mse << '\t' << mean.l_vg
                        << '\t' << mean.l_total << '\n';

        if (iter % cfg.val_every == 0 || iter == cfg.max_iters) run_validation(iter);
    }

    return result;
}

// ---- explicit instantiations -----------------------------------------------------

#define FLOW4DSR_INSTANTIATE_TRAIN(T)                                                        \
    template double loss_mse<T>(const Tensor<T>&, const Tensor<T>&);                         \
    template double loss_velocity_gradient<T>(const Tensor<T>&, const Tensor<T>&,            \
                                              const Vec3d&);                                 \
    template LossBreakdown total_loss<T>(const Tensor<T>&, const Tensor<T>&, const Vec3d&,   \
                                         double);                                            \
    template LossBreakdown total_loss_grad<T>(const Tensor<T>&, const Tensor<T>&,            \
                                              const Vec3d&, Tensor<T>&, double);             \
    template double loss_velocity_gradient_grad<T>(const Tensor<T>&, const Tensor<T>&,       \
                                                   const Vec3d&, Tensor<T>&);                \
    template void adam_step<T>(ModelParameters<T>&, const Gradients<T>&, AdamState<T>&,      \
                               double, const TrainConfig&);

FLOW4DSR_INSTANTIATE_TRAIN(float)
FLOW4DSR_INSTANTIATE_TRAIN(double)

#undef FLOW4DSR_INSTANTIATE_TRAIN

} // namespace flow4dsr
