#include <doctest.h>

#include "vorvq/kernels.hpp"
#include "vorvq/rng.hpp"

using namespace vorvq;

namespace {

// independent reference: naive i,j,k triple loop
Mat naive_matmul(const Mat& a, const Mat& b) {
    Mat c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    return c;
}

struct ParallelGuard {
    ~ParallelGuard() { kernels::set_parallel(true); }
};

}  // namespace

TEST_CASE("matmul matches the naive triple loop bit for bit") {
    Rng rng(11);
    const Mat a = randn(rng, 17, 9);
    const Mat b = randn(rng, 9, 13);
    Mat c;
    kernels::matmul(a, b, c);
    CHECK(bit_equal(c, naive_matmul(a, b)));
}

TEST_CASE("parallel and serial kernels agree bit for bit") {
    ParallelGuard guard;
    Rng rng(5);
    const Mat a = randn(rng, 33, 21);
    const Mat b = randn(rng, 21, 19);
    const Mat x = randn(rng, 40, 8);
    const Mat codes = randn(rng, 7, 8);

    Mat c_serial, c_par;
    kernels::matmul_serial(a, b, c_serial);
    kernels::set_parallel(true);
    kernels::matmul(a, b, c_par);
    CHECK(bit_equal(c_serial, c_par));

    Mat nt_serial, nt_par;
    kernels::matmul_nt_serial(x, x, nt_serial);
    kernels::matmul_nt(x, x, nt_par);
    CHECK(bit_equal(nt_serial, nt_par));

    Mat tn_serial, tn_par;
    kernels::matmul_tn_serial(a, a, tn_serial);
    kernels::matmul_tn(a, a, tn_par);
    CHECK(bit_equal(tn_serial, tn_par));

    Mat d_serial, d_par;
    kernels::pairwise_sqdist_serial(x, d_serial);
    kernels::pairwise_sqdist(x, d_par);
    CHECK(bit_equal(d_serial, d_par));

    std::vector<int> i_serial(x.rows), i_par(x.rows);
    std::vector<double> dd_serial(x.rows), dd_par(x.rows);
    kernels::nearest_rows_serial(x, codes, i_serial.data(), dd_serial.data());
    kernels::nearest_rows(x, codes, i_par.data(), dd_par.data());
    CHECK(i_serial == i_par);
    CHECK(dd_serial == dd_par);

    // disabling the flag must not change results either
    kernels::set_parallel(false);
    Mat c_off;
    kernels::matmul(a, b, c_off);
    CHECK(bit_equal(c_serial, c_off));
}

TEST_CASE("stft kernels: serial/parallel agreement and frame layout") {
    ParallelGuard guard;
    Rng rng(23);
    std::vector<double> wave(640);
    for (double& v : wave) v = rng.normal();
    const kernels::StftPlan plan = kernels::make_stft_plan(64, 16);
    const std::vector<double> padded = kernels::reflect_pad(wave, 32);
    const int frames = kernels::stft_frame_count(plan, wave.size());
    CHECK(frames == static_cast<int>(wave.size()) / 16 + 1);

    Mat mag_serial(plan.n_bins, frames), mag_par(plan.n_bins, frames);
    kernels::stft_mag_frames_serial(plan, padded, mag_serial);
    kernels::set_parallel(true);
    kernels::stft_mag_frames(plan, padded, mag_par);
    CHECK(bit_equal(mag_serial, mag_par));

    Mat dmag(plan.n_bins, frames, 0.5);
    std::vector<double> dpad_serial, dpad_par;
    kernels::set_parallel(false);
    kernels::stft_mag_adjoint(plan, padded, mag_serial, dmag, dpad_serial);
    kernels::set_parallel(true);
    kernels::stft_mag_adjoint(plan, padded, mag_par, dmag, dpad_par);
    CHECK(dpad_serial == dpad_par);
}

TEST_CASE("reflect padding mirrors without repeating the edge sample") {
    const std::vector<double> wave = {1.0, 2.0, 3.0, 4.0, 5.0};
    const std::vector<double> padded = kernels::reflect_pad(wave, 2);
    const std::vector<double> expected = {3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 5.0, 4.0, 3.0};
    CHECK(padded == expected);
}

TEST_CASE("crc32 matches the reference value for a known string") {
    // "123456789" -> 0xCBF43926 is the standard check value for CRC-32/IEEE
    const char* s = "123456789";
    CHECK(kernels::crc32(s, 9) == 0xCBF43926u);
}

TEST_CASE("rng stream is reproducible and normal draws are sane") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(7);
    double mean = 0.0, var = 0.0;
    const int n = 20000;
    std::vector<double> draws(n);
    for (double& d : draws) d = c.normal();
    for (double d : draws) mean += d;
    mean /= n;
    for (double d : draws) var += (d - mean) * (d - mean);
    var /= n;
    CHECK(std::fabs(mean) < 0.03);
    CHECK(std::fabs(var - 1.0) < 0.05);

    Rng d1(3), d2(3);
    for (int i = 0; i < 50; ++i) CHECK(d1.normal() == d2.normal());
}
