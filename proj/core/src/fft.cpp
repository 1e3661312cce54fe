#include "flow4dsr/fft.hpp"
#include "flow4dsr/errors.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <vector>

namespace flow4dsr {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative Cooley-Tukey, decimation in time. For constant inputs every
// non-DC coefficient is an exact 0.0 and the DC path only doubles, so
// power-of-two transforms of constants are exact in floating point.
void fft_pow2(std::span<cplx> a, const std::vector<cplx>& twiddle) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t step = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                cplx u = a[i + k];
                cplx v = a[i + k + len / 2] * twiddle[k * step];
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

struct Plan {
    std::size_t n = 0;
    std::vector<cplx> twiddle; // forward twiddles for the pow2 kernel, size m/2

    // Bluestein state (empty when n is a power of two)
    std::size_t m = 0;          // pow2 convolution length >= 2n-1
    std::vector<cplx> chirp;    // exp(-i*pi*k^2/n), size n
    std::vector<cplx> bfft;     // FFT of the conjugate-chirp kernel, size m

    explicit Plan(std::size_t n_) : n(n_) {
        if (is_pow2(n)) {
            twiddle = make_twiddles(n);
            return;
        }
        m = 1;
        while (m < 2 * n - 1) m <<= 1;
        twiddle = make_twiddles(m);
        chirp.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            // k^2 mod 2n keeps the angle argument small and precise
            std::size_t q = (k * k) % (2 * n);
            double ang = -M_PI * double(q) / double(n);
            chirp[k] = cplx(std::cos(ang), std::sin(ang));
        }
        std::vector<cplx> b(m, cplx(0, 0));
        b[0] = std::conj(chirp[0]);
        for (std::size_t k = 1; k < n; ++k) {
            b[k] = std::conj(chirp[k]);
            b[m - k] = std::conj(chirp[k]);
        }
        fft_pow2(b, twiddle);
        bfft = std::move(b);
    }

    static std::vector<cplx> make_twiddles(std::size_t m) {
        std::vector<cplx> tw(m / 2);
        for (std::size_t k = 0; k < m / 2; ++k) {
            double ang = -2.0 * M_PI * double(k) / double(m);
            tw[k] = cplx(std::cos(ang), std::sin(ang));
        }
        return tw;
    }

    void forward(std::span<cplx> a) const {
        if (is_pow2(n)) {
            fft_pow2(a, twiddle);
            return;
        }
        std::vector<cplx> x(m, cplx(0, 0));
        for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
        fft_pow2(x, twiddle);
        for (std::size_t k = 0; k < m; ++k) x[k] *= bfft[k];
        // inverse pow2 transform via conjugation
        for (auto& v : x) v = std::conj(v);
        fft_pow2(x, twiddle);
        const double inv_m = 1.0 / double(m);
        for (std::size_t k = 0; k < n; ++k)
            a[k] = std::conj(x[k]) * inv_m * chirp[k];
    }
};

const Plan& plan_for(std::size_t n) {
    static std::mutex mutex;
    static std::map<std::size_t, std::unique_ptr<Plan>> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(n);
    if (it == cache.end())
        it = cache.emplace(n, std::make_unique<Plan>(n)).first;
    return *it->second;
}

void transform_axis(Volume<cplx>& vol, int axis, bool inverse) {
    const Vec3i d = vol.dims();
    const std::size_t n = std::size_t(d[axis]);
    const Plan& plan = plan_for(n);

    std::int64_t stride;
    int c1, c2; // the two cross axes
    switch (axis) {
        case 0: stride = 1; c1 = 1; c2 = 2; break;
        case 1: stride = d[0]; c1 = 0; c2 = 2; break;
        default: stride = std::int64_t(d[0]) * d[1]; c1 = 0; c2 = 1; break;
    }

    std::vector<cplx> line(n);
    cplx* base = vol.data();
    for (int b = 0; b < d[c2]; ++b) {
        for (int a = 0; a < d[c1]; ++a) {
            Vec3i at{0, 0, 0};
            at[c1] = a;
            at[c2] = b;
            cplx* p = base + vol.index(at[0], at[1], at[2]);
            for (std::size_t k = 0; k < n; ++k) line[k] = p[std::int64_t(k) * stride];
            if (inverse)
                for (auto& v : line) v = std::conj(v);
            plan.forward(line);
            if (inverse) {
                const double inv_n = 1.0 / double(n);
                for (auto& v : line) v = std::conj(v) * inv_n;
            }
            for (std::size_t k = 0; k < n; ++k) p[std::int64_t(k) * stride] = line[k];
        }
    }
}

} // namespace

void fft1d(std::span<cplx> data, bool inverse) {
    if (data.empty()) throw ValidationError("fft1d: empty input");
    const Plan& plan = plan_for(data.size());
    if (!inverse) {
        plan.forward(data);
        return;
    }
    for (auto& v : data) v = std::conj(v);
    plan.forward(data);
    const double inv_n = 1.0 / double(data.size());
    for (auto& v : data) v = std::conj(v) * inv_n;
}

Volume<cplx> fft3(const Volume<cplx>& vol) {
    Volume<cplx> out = vol;
    for (int axis = 0; axis < 3; ++axis) transform_axis(out, axis, false);
    return out;
}

Volume<cplx> ifft3(const Volume<cplx>& vol) {
    Volume<cplx> out = vol;
    for (int axis = 0; axis < 3; ++axis) transform_axis(out, axis, true);
    return out;
}

} // namespace flow4dsr
