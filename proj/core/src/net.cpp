#include "flow4dsr/net.hpp"
#include "flow4dsr/errors.hpp"
#include "flow4dsr/rng.hpp"

#include <json.hpp>

#include <cblas.h>
#include <cmath>
#include <cstring>
#include <mutex>

namespace flow4dsr {

using nlohmann::json;

// ---- GEMM dispatch ---------------------------------------------------------

namespace {

void ensure_blas_single_threaded() {
    // conv parallelism is handled at the sample level; a single-threaded BLAS
    // keeps reductions deterministic
    static std::once_flag flag;
    std::call_once(flag, [] { openblas_set_num_threads(1); });
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta, float* c,
                 int ldc) {
    ensure_blas_single_threaded();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
                ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta, double* c,
                 int ldc) {
    ensure_blas_single_threaded();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
                ldc);
}

// symmetric padding index map; equals edge clamping for the 1-voxel pad of a
// 3^3 kernel
inline int mirror(int i, int n) {
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - 1 - i;
    return i;
}

constexpr std::size_t kColBudgetBytes = 8u << 20;

// Gather the shifted input lines for output lines [line0, line0+nlines) into
// `col`, rows ordered (c_in, dz, dy, dx) to match the weight layout.
template <typename T>
void im2col_lines(const T* x, int c_in, const Vec3i& dims, int line0, int nlines, T* col) {
    const int D = dims[0], H = dims[1], W = dims[2];
    const std::int64_t chw = std::int64_t(D) * H * W;
    const std::int64_t chunk = std::int64_t(nlines) * W;

    T* row = col;
    for (int ic = 0; ic < c_in; ++ic) {
        const T* xc = x + ic * chw;
        for (int dz = -1; dz <= 1; ++dz) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx, row += chunk) {
                    T* dst = row;
                    for (int l = 0; l < nlines; ++l, dst += W) {
                        int z = (line0 + l) / H;
                        int y = (line0 + l) % H;
                        const T* src = xc + (std::int64_t(mirror(z + dz, D)) * H +
                                             mirror(y + dy, H)) * W;
                        if (dx == 0) {
                            std::memcpy(dst, src, std::size_t(W) * sizeof(T));
                        } else if (dx < 0) {
                            dst[0] = src[0];
                            std::memcpy(dst + 1, src, std::size_t(W - 1) * sizeof(T));
                        } else {
                            std::memcpy(dst, src + 1, std::size_t(W - 1) * sizeof(T));
                            dst[W - 1] = src[W - 1];
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col_lines: scatter-add `col` back into the input gradient.
template <typename T>
void col2im_lines(const T* col, int c_in, const Vec3i& dims, int line0, int nlines, T* dx) {
    const int D = dims[0], H = dims[1], W = dims[2];
    const std::int64_t chw = std::int64_t(D) * H * W;
    const std::int64_t chunk = std::int64_t(nlines) * W;

    const T* row = col;
    for (int ic = 0; ic < c_in; ++ic) {
        T* xc = dx + ic * chw;
        for (int dz = -1; dz <= 1; ++dz) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx_off = -1; dx_off <= 1; ++dx_off, row += chunk) {
                    const T* src = row;
                    for (int l = 0; l < nlines; ++l, src += W) {
                        int z = (line0 + l) / H;
                        int y = (line0 + l) % H;
                        T* dst = xc + (std::int64_t(mirror(z + dz, D)) * H +
                                       mirror(y + dy, H)) * W;
                        if (dx_off == 0) {
                            for (int i = 0; i < W; ++i) dst[i] += src[i];
                        } else if (dx_off < 0) {
                            dst[0] += src[0];
                            for (int i = 0; i < W - 1; ++i) dst[i] += src[i + 1];
                        } else {
                            for (int i = 0; i < W - 1; ++i) dst[i + 1] += src[i];
                            dst[W - 1] += src[W - 1];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
std::vector<T>& col_workspace() {
    thread_local std::vector<T> ws;
    return ws;
}

int lines_per_chunk(int c_in, int W, std::size_t elem_size, int total_lines) {
    std::size_t per_line = std::size_t(c_in) * 27 * std::size_t(W) * elem_size;
    int lines = int(kColBudgetBytes / std::max<std::size_t>(per_line, 1));
    return std::max(1, std::min(lines, total_lines));
}

} // namespace

// ---- conv ------------------------------------------------------------------

template <typename T>
void conv3d_forward(const Tensor<T>& x, const T* weight, const T* bias, int c_out,
                    Tensor<T>& y) {
    const int c_in = x.shape[1];
    const Vec3i dims = x.spatial();
    const int K = c_in * 27;
    const int D = dims[0], H = dims[1], W = dims[2];
    const std::int64_t dhw = std::int64_t(D) * H * W;
    const int total_lines = D * H;

    if (y.shape != std::array<int, 5>{x.shape[0], c_out, D, H, W})
        y = Tensor<T>({x.shape[0], c_out, D, H, W});

    const int nlines = lines_per_chunk(c_in, W, sizeof(T), total_lines);
    auto& col = col_workspace<T>();
    col.resize(std::size_t(K) * std::size_t(nlines) * std::size_t(W));

    for (int n = 0; n < x.shape[0]; ++n) {
        const T* xs = x.sample(n);
        T* ys = y.sample(n);
        for (int line0 = 0; line0 < total_lines; line0 += nlines) {
            const int lines = std::min(nlines, total_lines - line0);
            const int chunk = lines * W;
            im2col_lines(xs, c_in, dims, line0, lines, col.data());
            gemm(false, false, c_out, chunk, K, T(1), weight, K, col.data(), chunk, T(0),
                 ys + std::int64_t(line0) * W, int(dhw));
        }
        for (int oc = 0; oc < c_out; ++oc) {
            T* row = ys + oc * dhw;
            const T b = bias[oc];
            for (std::int64_t i = 0; i < dhw; ++i) row[i] += b;
        }
    }
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const T* weight, int c_out, const Tensor<T>& dy,
                     T* dweight, T* dbias, Tensor<T>* dx) {
    const int c_in = x.shape[1];
    const Vec3i dims = x.spatial();
    const int K = c_in * 27;
    const int D = dims[0], H = dims[1], W = dims[2];
    const std::int64_t dhw = std::int64_t(D) * H * W;
    const int total_lines = D * H;

    const int nlines = lines_per_chunk(c_in, W, 2 * sizeof(T), total_lines);
    auto& ws = col_workspace<T>();
    const std::size_t col_size = std::size_t(K) * std::size_t(nlines) * std::size_t(W);
    ws.resize(2 * col_size); // col | dcol
    T* col = ws.data();
    T* dcol = ws.data() + col_size;

    for (int n = 0; n < x.shape[0]; ++n) {
        const T* xs = x.sample(n);
        const T* dys = dy.sample(n);
        T* dxs = dx ? dx->sample(n) : nullptr;
        for (int line0 = 0; line0 < total_lines; line0 += nlines) {
            const int lines = std::min(nlines, total_lines - line0);
            const int chunk = lines * W;
            im2col_lines(xs, c_in, dims, line0, lines, col);
            // dW += dY * col^T
            gemm(false, true, c_out, K, chunk, T(1), dys + std::int64_t(line0) * W, int(dhw),
                 col, chunk, T(1), dweight, K);
            if (dxs) {
                // dcol = W^T * dY
                gemm(true, false, K, chunk, c_out, T(1), weight, K,
                     dys + std::int64_t(line0) * W, int(dhw), T(0), dcol, chunk);
                col2im_lines(dcol, c_in, dims, line0, lines, dxs);
            }
        }
        for (int oc = 0; oc < c_out; ++oc) {
            const T* row = dys + oc * dhw;
            T acc = T(0);
            for (std::int64_t i = 0; i < dhw; ++i) acc += row[i];
            dbias[oc] += acc;
        }
    }
}

// ---- activations -------------------------------------------------------------

template <typename T>
void relu_inplace(Tensor<T>& t) {
    for (auto& v : t.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        if (!(y.data[i] > T(0))) dy.data[i] = T(0);
}

template <typename T>
void leaky_relu_inplace(Tensor<T>& t, T slope) {
    for (auto& v : t.data) v = v > T(0) ? v : slope * v;
}

template <typename T>
void leaky_relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy, T slope) {
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        if (!(y.data[i] > T(0))) dy.data[i] *= slope;
}

template <typename T>
void tanh_inplace(Tensor<T>& t) {
    for (auto& v : t.data) v = std::tanh(v);
}

template <typename T>
void tanh_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        dy.data[i] *= T(1) - y.data[i] * y.data[i];
}

// ---- trilinear resize --------------------------------------------------------

namespace {

struct AxisTap {
    int i0, i1;
    double w1; // weight of i1; i0 gets (1 - w1)
};

std::vector<AxisTap> upsample_taps(int n_in) {
    std::vector<AxisTap> taps(std::size_t(2 * n_in));
    for (int i = 0; i < 2 * n_in; ++i) {
        double c = 0.5 * i - 0.25;
        double f = std::floor(c);
        int i0 = int(f);
        double t = c - f;
        taps[std::size_t(i)] = {std::clamp(i0, 0, n_in - 1), std::clamp(i0 + 1, 0, n_in - 1),
                                t};
    }
    return taps;
}

} // namespace

template <typename T>
void trilinear2x_channel(const T* in, const Vec3i& in_dims, T* out) {
    const int D = in_dims[0], H = in_dims[1], W = in_dims[2];
    const auto tz = upsample_taps(D), ty = upsample_taps(H), tx = upsample_taps(W);
    std::int64_t o = 0;
    for (int z = 0; z < 2 * D; ++z) {
        const auto& az = tz[std::size_t(z)];
        for (int y = 0; y < 2 * H; ++y) {
            const auto& ay = ty[std::size_t(y)];
            const T* p00 = in + (std::int64_t(az.i0) * H + ay.i0) * W;
            const T* p01 = in + (std::int64_t(az.i0) * H + ay.i1) * W;
            const T* p10 = in + (std::int64_t(az.i1) * H + ay.i0) * W;
            const T* p11 = in + (std::int64_t(az.i1) * H + ay.i1) * W;
            const T wz1 = T(az.w1), wz0 = T(1) - wz1;
            const T wy1 = T(ay.w1), wy0 = T(1) - wy1;
            for (int x = 0; x < 2 * W; ++x, ++o) {
                const auto& ax = tx[std::size_t(x)];
                const T wx1 = T(ax.w1), wx0 = T(1) - wx1;
                T v00 = p00[ax.i0] * wx0 + p00[ax.i1] * wx1;
                T v01 = p01[ax.i0] * wx0 + p01[ax.i1] * wx1;
                T v10 = p10[ax.i0] * wx0 + p10[ax.i1] * wx1;
                T v11 = p11[ax.i0] * wx0 + p11[ax.i1] * wx1;
                out[o] = wz0 * (wy0 * v00 + wy1 * v01) + wz1 * (wy0 * v10 + wy1 * v11);
            }
        }
    }
}

template <typename T>
Tensor<T> upsample_trilinear2x(const Tensor<T>& x) {
    const Vec3i d = x.spatial();
    Tensor<T> y({x.shape[0], x.shape[1], 2 * d[0], 2 * d[1], 2 * d[2]});
    const std::int64_t in_ch = x.channel_size();
    const std::int64_t out_ch = y.channel_size();
    for (int n = 0; n < x.shape[0]; ++n)
        for (int c = 0; c < x.shape[1]; ++c)
            trilinear2x_channel(x.sample(n) + c * in_ch, d, y.sample(n) + c * out_ch);
    return y;
}

template <typename T>
Tensor<T> upsample_trilinear2x_backward(const Tensor<T>& dy, const Vec3i& in_dims) {
    const int D = in_dims[0], H = in_dims[1], W = in_dims[2];
    Tensor<T> dx({dy.shape[0], dy.shape[1], D, H, W});
    const auto tz = upsample_taps(D), ty = upsample_taps(H), tx = upsample_taps(W);
    const std::int64_t in_ch = dx.channel_size();
    const std::int64_t out_ch = dy.channel_size();
    for (int n = 0; n < dy.shape[0]; ++n) {
        for (int c = 0; c < dy.shape[1]; ++c) {
            const T* g = dy.sample(n) + c * out_ch;
            T* d = dx.sample(n) + c * in_ch;
            std::int64_t o = 0;
            for (int z = 0; z < 2 * D; ++z) {
                const auto& az = tz[std::size_t(z)];
                for (int y = 0; y < 2 * H; ++y) {
                    const auto& ay = ty[std::size_t(y)];
                    for (int x = 0; x < 2 * W; ++x, ++o) {
                        const auto& ax = tx[std::size_t(x)];
                        const T gv = g[o];
                        const T wz1 = T(az.w1), wz0 = T(1) - wz1;
                        const T wy1 = T(ay.w1), wy0 = T(1) - wy1;
                        const T wx1 = T(ax.w1), wx0 = T(1) - wx1;
                        d[(std::int64_t(az.i0) * H + ay.i0) * W + ax.i0] += gv * wz0 * wy0 * wx0;
                        d[(std::int64_t(az.i0) * H + ay.i0) * W + ax.i1] += gv * wz0 * wy0 * wx1;
                        d[(std::int64_t(az.i0) * H + ay.i1) * W + ax.i0] += gv * wz0 * wy1 * wx0;
                        d[(std::int64_t(az.i0) * H + ay.i1) * W + ax.i1] += gv * wz0 * wy1 * wx1;
                        d[(std::int64_t(az.i1) * H + ay.i0) * W + ax.i0] += gv * wz1 * wy0 * wx0;
                        d[(std::int64_t(az.i1) * H + ay.i0) * W + ax.i1] += gv * wz1 * wy0 * wx1;
                        d[(std::int64_t(az.i1) * H + ay.i1) * W + ax.i0] += gv * wz1 * wy1 * wx0;
                        d[(std::int64_t(az.i1) * H + ay.i1) * W + ax.i1] += gv * wz1 * wy1 * wx1;
                    }
                }
            }
        }
    }
    return dx;
}

// ---- channel concat ----------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape[0] != b.shape[0] || a.spatial() != b.spatial())
        throw ValidationError("concat_channels: shape mismatch");
    Tensor<T> out({a.shape[0], a.shape[1] + b.shape[1], a.shape[2], a.shape[3], a.shape[4]});
    const std::int64_t sa = a.sample_size(), sb = b.sample_size();
    for (int n = 0; n < a.shape[0]; ++n) {
        std::memcpy(out.sample(n), a.sample(n), std::size_t(sa) * sizeof(T));
        std::memcpy(out.sample(n) + sa, b.sample(n), std::size_t(sb) * sizeof(T));
    }
    return out;
}

template <typename T>
void split_channels(const Tensor<T>& cat, Tensor<T>& a, Tensor<T>& b) {
    const std::int64_t sa = a.sample_size(), sb = b.sample_size();
    for (int n = 0; n < cat.shape[0]; ++n) {
        std::memcpy(a.sample(n), cat.sample(n), std::size_t(sa) * sizeof(T));
        std::memcpy(b.sample(n), cat.sample(n) + sa, std::size_t(sb) * sizeof(T));
    }
}

// ---- anatomy channels ----------------------------------------------------------

template <typename T>
std::array<Volume<T>, 3> compute_anatomy_channels(const std::array<Volume<T>, 3>& mags,
                                                  const std::array<Volume<T>, 3>& vels) {
    for (int c = 0; c < 3; ++c) {
        require_same_shape(mags[std::size_t(c)].dims(), mags[0].dims(), "anatomy mags");
        require_same_shape(vels[std::size_t(c)].dims(), mags[0].dims(), "anatomy vels");
    }
    std::array<Volume<T>, 3> out{Volume<T>(mags[0].dims()), Volume<T>(mags[0].dims()),
                                 Volume<T>(mags[0].dims())};
    for (std::int64_t n = 0; n < mags[0].size(); ++n) {
        T mag = std::sqrt(mags[0][n] * mags[0][n] + mags[1][n] * mags[1][n] +
                          mags[2][n] * mags[2][n]);
        T speed = std::sqrt(vels[0][n] * vels[0][n] + vels[1][n] * vels[1][n] +
                            vels[2][n] * vels[2][n]);
        out[0][n] = mag;
        out[1][n] = speed;
        out[2][n] = mag * speed;
    }
    return out;
}

// ---- Net --------------------------------------------------------------------

void NetConfig::validate() const {
    if (base_filters < 1) throw ValidationError("NetConfig: base_filters must be >= 1");
    if (lr_resblocks < 0 || hr_resblocks < 0)
        throw ValidationError("NetConfig: resblock counts must be >= 0");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0))
        throw ValidationError("NetConfig: leaky_slope must be in [0, 1)");
    if (kernel != 3) throw ValidationError("NetConfig: only 3^3 kernels are supported");
}

template <typename T>
void Net<T>::build_layout() {
    const int F = config_.base_filters;
    auto add_conv = [&](const std::string& name, int c_in, int c_out) {
        ConvRef ref;
        ref.name = name;
        ref.c_in = c_in;
        ref.c_out = c_out;
        ref.w_index = int(params_.tensors.size());
        params_.add(name + ".weight", {c_out, c_in, 3, 3, 3});
        ref.b_index = int(params_.tensors.size());
        params_.add(name + ".bias", {c_out});
        return ref;
    };

    entry_vel_ = add_conv("entry_velocity", 3, F);
    entry_anat_ = add_conv("entry_anatomy", 3, F);
    fuse_ = add_conv("fuse", 2 * F, F);
    lr_rb_.clear();
    for (int i = 0; i < config_.lr_resblocks; ++i) {
        std::string base = "lr_rb" + std::to_string(i);
        lr_rb_.push_back({add_conv(base + ".conv1", F, F), add_conv(base + ".conv2", F, F)});
    }
    hr_rb_.clear();
    for (int i = 0; i < config_.hr_resblocks; ++i) {
        std::string base = "hr_rb" + std::to_string(i);
        hr_rb_.push_back({add_conv(base + ".conv1", F, F), add_conv(base + ".conv2", F, F)});
    }
    branch_.clear();
    for (int b = 0; b < 3; ++b) {
        std::string base = "branch" + std::to_string(b);
        branch_.push_back({add_conv(base + ".conv1", F, F), add_conv(base + ".out", F, 1)});
    }
}

template <typename T>
Net<T>::Net(NetConfig config, std::uint64_t init_seed) : config_(config) {
    config_.validate();
    build_layout();
    // fan-in-scaled uniform init, biases zero; drawn in declaration order
    Rng rng(init_seed);
    for (auto& t : params_.tensors) {
        if (t.name.ends_with(".bias")) continue;
        const int fan_in = t.shape[1] * t.shape[2] * t.shape[3] * t.shape[4];
        const double bound = std::sqrt(1.0 / double(fan_in));
        for (auto& w : t.data) w = T(rng.uniform(-bound, bound));
    }
}

template <typename T>
Net<T>::Net(NetConfig config, ModelParameters<T> params) : config_(config) {
    config_.validate();
    build_layout();
    if (params.tensors.size() != params_.tensors.size())
        throw ValidationError("Net: parameter tensor count mismatch");
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        if (params.tensors[i].name != params_.tensors[i].name ||
            params.tensors[i].shape != params_.tensors[i].shape)
            throw ValidationError("Net: parameter '" + params.tensors[i].name +
                                  "' does not match the declared layout");
    }
    params_ = std::move(params);
}

namespace {

template <typename T>
void validate_net_inputs(const Tensor<T>& velocity, const Tensor<T>& anatomy) {
    if (velocity.shape != anatomy.shape)
        throw ValidationError("Net: velocity and anatomy shapes differ");
    if (velocity.shape[1] != 3) throw ValidationError("Net: inputs must have 3 channels");
    const Vec3i d = velocity.spatial();
    if (d[0] != d[1] || d[1] != d[2])
        throw ValidationError("Net: input patches must be cubes");
    if (d[0] < 8) throw ValidationError("Net: cube size must be >= 8, got " +
                                        std::to_string(d[0]));
    for (const T& v : velocity.data) {
        if (!std::isfinite(double(v)) || std::abs(double(v)) > 1.0 + 1e-4)
            throw ValidationError("Net: velocity input outside [-1, 1]");
    }
    for (const T& v : anatomy.data) {
        // mag/speed reach sqrt(3) and pcmra 3 for normalized component inputs
        if (!std::isfinite(double(v)) || double(v) < -1e-6 || double(v) > 3.0 + 1e-3)
            throw ValidationError("Net: anatomy input outside [0, 3]");
    }
}

} // namespace

template <typename T>
Tensor<T> Net<T>::forward(const Tensor<T>& velocity, const Tensor<T>& anatomy,
                          Trace& trace) const {
    validate_net_inputs(velocity, anatomy);
    const T slope = T(config_.leaky_slope);

    trace.x_vel = velocity;
    trace.x_anat = anatomy;

    Tensor<T> tv, ta;
    conv3d_forward(velocity, weight(entry_vel_), bias(entry_vel_), entry_vel_.c_out, tv);
    relu_inplace(tv);
    conv3d_forward(anatomy, weight(entry_anat_), bias(entry_anat_), entry_anat_.c_out, ta);
    relu_inplace(ta);
    trace.entry_vel = tv;
    trace.entry_anat = ta;

    Tensor<T> cat = concat_channels(tv, ta);
    Tensor<T> h;
    conv3d_forward(cat, weight(fuse_), bias(fuse_), fuse_.c_out, h);
    relu_inplace(h);
    trace.fused = h;

    trace.rb_in_lr.clear();
    trace.rb_mid_lr.clear();
    for (const auto& rb : lr_rb_) {
        trace.rb_in_lr.push_back(h);
        Tensor<T> mid;
        conv3d_forward(h, weight(rb[0]), bias(rb[0]), rb[0].c_out, mid);
        leaky_relu_inplace(mid, slope);
        trace.rb_mid_lr.push_back(mid);
        Tensor<T> delta;
        conv3d_forward(mid, weight(rb[1]), bias(rb[1]), rb[1].c_out, delta);
        for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += delta.data[i];
    }

    Tensor<T> u = upsample_trilinear2x(h);
    trace.upsampled = u;

    trace.rb_in_hr.clear();
    trace.rb_mid_hr.clear();
    for (const auto& rb : hr_rb_) {
        trace.rb_in_hr.push_back(u);
        Tensor<T> mid;
        conv3d_forward(u, weight(rb[0]), bias(rb[0]), rb[0].c_out, mid);
        leaky_relu_inplace(mid, slope);
        trace.rb_mid_hr.push_back(mid);
        Tensor<T> delta;
        conv3d_forward(mid, weight(rb[1]), bias(rb[1]), rb[1].c_out, delta);
        for (std::size_t i = 0; i < u.data.size(); ++i) u.data[i] += delta.data[i];
    }
    trace.hr_final = u;

    const Vec3i od = u.spatial();
    Tensor<T> out({velocity.shape[0], 3, od[0], od[1], od[2]});
    trace.branch_mid.clear();
    trace.branch_out.clear();
    for (int b = 0; b < 3; ++b) {
        Tensor<T> mid;
        conv3d_forward(u, weight(branch_[std::size_t(b)][0]), bias(branch_[std::size_t(b)][0]),
                       branch_[std::size_t(b)][0].c_out, mid);
        relu_inplace(mid);
        trace.branch_mid.push_back(mid);
        Tensor<T> yb;
        conv3d_forward(mid, weight(branch_[std::size_t(b)][1]), bias(branch_[std::size_t(b)][1]),
                       1, yb);
        tanh_inplace(yb);
        trace.branch_out.push_back(yb);
        const std::int64_t ch = out.channel_size();
        for (int n = 0; n < out.shape[0]; ++n)
            std::memcpy(out.sample(n) + b * ch, yb.sample(n), std::size_t(ch) * sizeof(T));
    }
    return out;
}

template <typename T>
Tensor<T> Net<T>::forward(const Tensor<T>& velocity, const Tensor<T>& anatomy) const {
    Trace trace;
    return forward(velocity, anatomy, trace);
}

template <typename T>
void Net<T>::backward(const Trace& trace, const Tensor<T>& grad_out,
                      Gradients<T>& grads) const {
    const T slope = T(config_.leaky_slope);
    auto gw = [&](const ConvRef& c) { return grads.g[std::size_t(c.w_index)].data(); };
    auto gb = [&](const ConvRef& c) { return grads.g[std::size_t(c.b_index)].data(); };

    // branches
    const Vec3i od = trace.hr_final.spatial();
    Tensor<T> du({grad_out.shape[0], trace.hr_final.shape[1], od[0], od[1], od[2]});
    const std::int64_t ch = grad_out.channel_size();
    for (int b = 0; b < 3; ++b) {
        const auto& conv1 = branch_[std::size_t(b)][0];
        const auto& conv_out = branch_[std::size_t(b)][1];
        Tensor<T> dyb({grad_out.shape[0], 1, od[0], od[1], od[2]});
        for (int n = 0; n < grad_out.shape[0]; ++n)
            std::memcpy(dyb.sample(n), grad_out.sample(n) + b * ch,
                        std::size_t(ch) * sizeof(T));
        tanh_backward_inplace(trace.branch_out[std::size_t(b)], dyb);
        Tensor<T> dmid(trace.branch_mid[std::size_t(b)].shape);
        conv3d_backward(trace.branch_mid[std::size_t(b)], weight(conv_out), 1, dyb,
                        gw(conv_out), gb(conv_out), &dmid);
        relu_backward_inplace(trace.branch_mid[std::size_t(b)], dmid);
        Tensor<T> du_b(du.shape);
        conv3d_backward(trace.hr_final, weight(conv1), conv1.c_out, dmid, gw(conv1), gb(conv1),
                        &du_b);
        for (std::size_t i = 0; i < du.data.size(); ++i) du.data[i] += du_b.data[i];
    }

    // HR residual blocks, reversed
    for (int i = config_.hr_resblocks - 1; i >= 0; --i) {
        const auto& rb = hr_rb_[std::size_t(i)];
        const auto& in = trace.rb_in_hr[std::size_t(i)];
        const auto& mid = trace.rb_mid_hr[std::size_t(i)];
        Tensor<T> dmid(mid.shape);
        conv3d_backward(mid, weight(rb[1]), rb[1].c_out, du, gw(rb[1]), gb(rb[1]), &dmid);
        leaky_relu_backward_inplace(mid, dmid, slope);
        Tensor<T> din(in.shape);
        conv3d_backward(in, weight(rb[0]), rb[0].c_out, dmid, gw(rb[0]), gb(rb[0]), &din);
        for (std::size_t j = 0; j < du.data.size(); ++j) du.data[j] += din.data[j];
    }

    // upsampling adjoint
    Tensor<T> dh = upsample_trilinear2x_backward(du, trace.fused.spatial());

    // LR residual blocks, reversed
    for (int i = config_.lr_resblocks - 1; i >= 0; --i) {
        const auto& rb = lr_rb_[std::size_t(i)];
        const auto& in = trace.rb_in_lr[std::size_t(i)];
        const auto& mid = trace.rb_mid_lr[std::size_t(i)];
        Tensor<T> dmid(mid.shape);
        conv3d_backward(mid, weight(rb[1]), rb[1].c_out, dh, gw(rb[1]), gb(rb[1]), &dmid);
        leaky_relu_backward_inplace(mid, dmid, slope);
        Tensor<T> din(in.shape);
        conv3d_backward(in, weight(rb[0]), rb[0].c_out, dmid, gw(rb[0]), gb(rb[0]), &din);
        for (std::size_t j = 0; j < dh.data.size(); ++j) dh.data[j] += din.data[j];
    }

    // fusion and entry paths
    relu_backward_inplace(trace.fused, dh);
    Tensor<T> cat = concat_channels(trace.entry_vel, trace.entry_anat);
    Tensor<T> dcat(cat.shape);
    conv3d_backward(cat, weight(fuse_), fuse_.c_out, dh, gw(fuse_), gb(fuse_), &dcat);

    Tensor<T> dtv(trace.entry_vel.shape), dta(trace.entry_anat.shape);
    split_channels(dcat, dtv, dta);
    relu_backward_inplace(trace.entry_vel, dtv);
    relu_backward_inplace(trace.entry_anat, dta);
    conv3d_backward(trace.x_vel, weight(entry_vel_), entry_vel_.c_out, dtv, gw(entry_vel_),
                    gb(entry_vel_), nullptr);
    conv3d_backward(trace.x_anat, weight(entry_anat_), entry_anat_.c_out, dta, gw(entry_anat_),
                    gb(entry_anat_), nullptr);
}

// ---- checkpoint ----------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'F', '4', 'D', 'W'};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json j;
    j["config"] = {{"base_filters", ckpt.config.base_filters},
                   {"lr_resblocks", ckpt.config.lr_resblocks},
                   {"hr_resblocks", ckpt.config.hr_resblocks},
                   {"leaky_slope", ckpt.config.leaky_slope},
                   {"kernel", ckpt.config.kernel}};
    j["iteration"] = ckpt.iteration;
    j["validation_metric"] = ckpt.validation_metric;
    json tensors = json::array();
    for (const auto& t : ckpt.params.tensors)
        tensors.push_back({{"name", t.name}, {"shape", t.shape}});
    j["tensors"] = tensors;
    std::string head = j.dump();

    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw FormatError("checkpoint: cannot write '" + path.string() + "'");
    std::uint32_t len = std::uint32_t(head.size());
    bool ok = std::fwrite(kCkptMagic, 1, 4, f) == 4 && std::fwrite(&len, 4, 1, f) == 1 &&
              std::fwrite(head.data(), 1, head.size(), f) == head.size();
    for (const auto& t : ckpt.params.tensors)
        ok = ok && std::fwrite(t.data.data(), 4, t.data.size(), f) == t.data.size();
    std::fclose(f);
    if (!ok) throw FormatError("checkpoint: short write to '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw FormatError("checkpoint: cannot open '" + path.string() + "'");
    auto fail = [&](const std::string& why) {
        std::fclose(f);
        throw FormatError("checkpoint: " + why + " in '" + path.string() + "'");
    };
    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kCkptMagic, 4) != 0)
        fail("bad magic");
    std::uint32_t len = 0;
    if (std::fread(&len, 4, 1, f) != 1 || len == 0 || len > (16u << 20))
        fail("bad header length");
    std::string head(len, '\0');
    if (std::fread(head.data(), 1, len, f) != len) fail("truncated header");

    Checkpoint ckpt;
    try {
        json j = json::parse(head);
        ckpt.config.base_filters = j.at("config").at("base_filters").get<int>();
        ckpt.config.lr_resblocks = j.at("config").at("lr_resblocks").get<int>();
        ckpt.config.hr_resblocks = j.at("config").at("hr_resblocks").get<int>();
        ckpt.config.leaky_slope = j.at("config").at("leaky_slope").get<double>();
        ckpt.config.kernel = j.at("config").at("kernel").get<int>();
        ckpt.iteration = j.at("iteration").get<std::int64_t>();
        ckpt.validation_metric = j.at("validation_metric").get<double>();
        for (const auto& t : j.at("tensors"))
            ckpt.params.add(t.at("name").get<std::string>(),
                            t.at("shape").get<std::vector<int>>());
    } catch (const json::exception& e) {
        fail(std::string("bad header: ") + e.what());
    }
    for (auto& t : ckpt.params.tensors)
        if (std::fread(t.data.data(), 4, t.data.size(), f) != t.data.size())
            fail("truncated tensor '" + t.name + "'");
    std::fclose(f);
    return ckpt;
}

// ---- explicit instantiations ----------------------------------------------------

#define FLOW4DSR_INSTANTIATE(T)                                                              \
    template void conv3d_forward<T>(const Tensor<T>&, const T*, const T*, int, Tensor<T>&); \
    template void conv3d_backward<T>(const Tensor<T>&, const T*, int, const Tensor<T>&,     \
                                     T*, T*, Tensor<T>*);                                   \
    template void relu_inplace<T>(Tensor<T>&);                                              \
    template void relu_backward_inplace<T>(const Tensor<T>&, Tensor<T>&);                   \
    template void leaky_relu_inplace<T>(Tensor<T>&, T);                                     \
    template void leaky_relu_backward_inplace<T>(const Tensor<T>&, Tensor<T>&, T);          \
    template void tanh_inplace<T>(Tensor<T>&);                                              \
    template void tanh_backward_inplace<T>(const Tensor<T>&, Tensor<T>&);                   \
    template Tensor<T> upsample_trilinear2x<T>(const Tensor<T>&);                           \
    template Tensor<T> upsample_trilinear2x_backward<T>(const Tensor<T>&, const Vec3i&);    \
    template void trilinear2x_channel<T>(const T*, const Vec3i&, T*);                       \
    template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);              \
    template void split_channels<T>(const Tensor<T>&, Tensor<T>&, Tensor<T>&);              \
    template std::array<Volume<T>, 3> compute_anatomy_channels<T>(                          \
        const std::array<Volume<T>, 3>&, const std::array<Volume<T>, 3>&);                  \
    template class Net<T>;

FLOW4DSR_INSTANTIATE(float)
FLOW4DSR_INSTANTIATE(double)

#undef FLOW4DSR_INSTANTIATE

} // namespace flow4dsr
