// Times the OpenMP kernels against their serial references.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "vorvq/kernels.hpp"
#include "vorvq/rng.hpp"

using namespace vorvq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_per_run(const std::function<void()>& fn, int runs) {
    fn();  // warm up
    const auto start = Clock::now();
    for (int i = 0; i < runs; ++i) fn();
    const std::chrono::duration<double> elapsed = Clock::now() - start;
    return elapsed.count() / runs;
}

void report(const char* name, double serial_s, double parallel_s) {
    std::printf("%-22s serial %9.4f ms   omp %9.4f ms   speedup %.2fx\n", name,
                serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s);
}

}  // namespace

int main() {
    Rng rng(7);
    const int runs = 5;

    {
        const Mat a = randn(rng, 512, 768);
        const Mat b = randn(rng, 768, 512);
        Mat c;
        const double s = seconds_per_run([&] {
            kernels::matmul_serial(a, b, c);
        }, runs);
        kernels::set_parallel(true);
        const double p = seconds_per_run([&] { kernels::matmul(a, b, c); }, runs);
        report("matmul 512x768x512", s, p);
    }
    {
        const Mat a = randn(rng, 1024, 768);
        Mat c;
        const double s = seconds_per_run([&] { kernels::matmul_nt_serial(a, a, c); }, runs);
        const double p = seconds_per_run([&] { kernels::matmul_nt(a, a, c); }, runs);
        report("matmul_nt 1024x768", s, p);
    }
    {
        const Mat x = randn(rng, 1500, 16);
        Mat d;
        const double s = seconds_per_run([&] { kernels::pairwise_sqdist_serial(x, d); }, runs);
        const double p = seconds_per_run([&] { kernels::pairwise_sqdist(x, d); }, runs);
        report("pairwise 1500x16", s, p);
    }
    {
        const Mat x = randn(rng, 4096, 16);
        const Mat codes = randn(rng, 64, 16);
        std::vector<int> idx(x.rows);
        std::vector<double> dist(x.rows);
        const double s = seconds_per_run(
            [&] { kernels::nearest_rows_serial(x, codes, idx.data(), dist.data()); }, runs);
        const double p = seconds_per_run(
            [&] { kernels::nearest_rows(x, codes, idx.data(), dist.data()); }, runs);
        report("nearest 4096/64", s, p);
    }
    {
        const kernels::StftPlan plan = kernels::make_stft_plan(512, 128);
        std::vector<double> wave(16000);
        Rng wrng(9);
        for (double& v : wave) v = wrng.normal();
        const std::vector<double> padded = kernels::reflect_pad(wave, 256);
        Mat mag(plan.n_bins, kernels::stft_frame_count(plan, wave.size()));
        const double s =
            seconds_per_run([&] { kernels::stft_mag_frames_serial(plan, padded, mag); }, runs);
        const double p =
            seconds_per_run([&] { kernels::stft_mag_frames(plan, padded, mag); }, runs);
        report("stft 16k/512/128", s, p);
    }
    {
        const Mat a = randn(rng, 2000, 2000);
        std::vector<double> x(2000), y;
        Rng vrng(3);
        for (double& v : x) v = vrng.normal();
        const double s = seconds_per_run([&] { kernels::symv_serial(a, x, y); }, runs);
        const double p = seconds_per_run([&] { kernels::symv(a, x, y); }, runs);
        report("symv 2000", s, p);
    }
    return 0;
}
