#include "flow4dsr/fft.hpp"
#include "flow4dsr/errors.hpp"
#include "flow4dsr/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace flow4dsr;

namespace {

// Brute-force DFT oracle, O(n^2); kept independent of the fft implementation.
std::vector<cplx> dft_oracle(const std::vector<cplx>& x, bool inverse) {
    const std::size_t n = x.size();
    std::vector<cplx> out(n);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t k = 0; k < n; ++k) {
        cplx acc(0, 0);
        for (std::size_t j = 0; j < n; ++j) {
            double ang = sign * 2.0 * M_PI * double(k * j % n) / double(n);
            acc += x[j] * cplx(std::cos(ang), std::sin(ang));
        }
        out[k] = inverse ? acc / double(n) : acc;
    }
    return out;
}

std::vector<cplx> random_signal(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<cplx> x(n);
    for (auto& v : x) v = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
    return x;
}

double max_abs_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_SUITE("fft") {

TEST_CASE("1d matches the brute-force DFT oracle for pow2 and general sizes") {
    for (std::size_t n : {2u, 4u, 6u, 8u, 10u, 12u, 16u, 20u, 24u, 29u, 48u, 64u}) {
        auto x = random_signal(n, 100 + n);
        auto want = dft_oracle(x, false);
        auto got = x;
        fft1d(got, false);
        CHECK_MESSAGE(max_abs_diff(got, want) < 1e-10 * double(n), "forward n=", n);

        auto want_inv = dft_oracle(x, true);
        auto got_inv = x;
        fft1d(got_inv, true);
        CHECK_MESSAGE(max_abs_diff(got_inv, want_inv) < 1e-12 * double(n), "inverse n=", n);
    }
}

TEST_CASE("3d round trip is identity within 1e-10 relative") {
    Volume<cplx> vol({6, 8, 10});
    Rng rng(7);
    double scale = 0;
    for (std::int64_t i = 0; i < vol.size(); ++i) {
        vol[i] = cplx(rng.uniform(-1, 1), rng.uniform(-1, 1));
        scale = std::max(scale, std::abs(vol[i]));
    }
    Volume<cplx> back = ifft3(fft3(vol));
    double err = 0;
    for (std::int64_t i = 0; i < vol.size(); ++i)
        err = std::max(err, std::abs(back[i] - vol[i]));
    CHECK(err / scale < 1e-10);
}

TEST_CASE("constant volume transforms to a pure DC bin") {
    const cplx c(1.25, -0.5);
    Volume<cplx> vol({4, 4, 8}, c);
    Volume<cplx> ks = fft3(vol);
    CHECK(ks(0, 0, 0) == c * double(vol.size())); // exact for pow2 dims
    for (std::int64_t i = 1; i < ks.size(); ++i) CHECK(ks[i] == cplx(0, 0));
    // and back, exactly
    Volume<cplx> back = ifft3(ks);
    for (std::int64_t i = 0; i < back.size(); ++i) CHECK(back[i] == c);
}

TEST_CASE("impulse at origin gives a flat unit k-space") {
    Volume<cplx> vol({4, 4, 4});
    vol(0, 0, 0) = cplx(1, 0);
    Volume<cplx> ks = fft3(vol);
    for (std::int64_t i = 0; i < ks.size(); ++i) {
        CHECK(ks[i].real() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(ks[i].imag() == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("empty input is rejected") {
    std::vector<cplx> empty;
    CHECK_THROWS_AS(fft1d(empty, false), ValidationError);
}

} // TEST_SUITE
