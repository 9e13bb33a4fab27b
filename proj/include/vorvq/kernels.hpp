#pragma once

// Data-parallel inner loops shared by the quantizer, tape, DSP and
// clustering code. Every kernel comes in two flavours: a plain serial
// reference (*_serial) and an OpenMP version that splits work across
// independent output rows. Each output element is produced by exactly one
// thread with the same per-element arithmetic as the serial code, so the
// two flavours agree bit for bit regardless of thread count.
//
// The default entry points dispatch on set_parallel(); tests pin it both
// ways and compare, tools/bench times the two sides.

#include <cstdint>
#include <vector>

#include "vorvq/mat.hpp"

namespace vorvq::kernels {

void set_parallel(bool enabled);
bool parallel_enabled();

// C = A * B
void matmul_serial(const Mat& a, const Mat& b, Mat& c);
void matmul(const Mat& a, const Mat& b, Mat& c);

// C = A * B^T
void matmul_nt_serial(const Mat& a, const Mat& b, Mat& c);
void matmul_nt(const Mat& a, const Mat& b, Mat& c);

// C = A^T * B
void matmul_tn_serial(const Mat& a, const Mat& b, Mat& c);
void matmul_tn(const Mat& a, const Mat& b, Mat& c);

// D(i,j) = squared euclidean distance between rows i and j of X
void pairwise_sqdist_serial(const Mat& x, Mat& d);
void pairwise_sqdist(const Mat& x, Mat& d);

// per-row nearest neighbour among the rows of `codes`; ties break to the
// lowest index. idx and dist must have x.rows entries.
void nearest_rows_serial(const Mat& x, const Mat& codes, int* idx, double* dist);
void nearest_rows(const Mat& x, const Mat& codes, int* idx, double* dist);

// y = A * x for symmetric dense A (used by the eigensolver's iteration)
void symv_serial(const Mat& a, const std::vector<double>& x, std::vector<double>& y);
void symv(const Mat& a, const std::vector<double>& x, std::vector<double>& y);

// ---- windowed DFT magnitudes ------------------------------------------

struct StftPlan {
    int n_fft = 0;
    int hop = 0;
    int n_bins = 0;              // n_fft/2 + 1
    std::vector<double> window;  // periodic Hann, length n_fft
    // cos/sin tables, n_bins x n_fft row-major
    std::vector<double> cos_table;
    std::vector<double> sin_table;
};

StftPlan make_stft_plan(int n_fft, int hop);

// reflect-pad by n_fft/2 on both sides (librosa-style centering)
std::vector<double> reflect_pad(const std::vector<double>& wave, int pad);

int stft_frame_count(const StftPlan& plan, size_t wave_len);

// mag is n_bins x n_frames; padded must hold reflect_pad(wave, n_fft/2)
void stft_mag_frames_serial(const StftPlan& plan, const std::vector<double>& padded, Mat& mag);
void stft_mag_frames(const StftPlan& plan, const std::vector<double>& padded, Mat& mag);

// adjoint of stft_mag_frames: accumulates d(loss)/d(padded wave) given
// d(loss)/d(mag). Zero-magnitude bins contribute zero (subgradient).
void stft_mag_adjoint(const StftPlan& plan, const std::vector<double>& padded, const Mat& mag,
                      const Mat& dmag, std::vector<double>& dpadded);

// fold gradient of the padded signal back onto the unpadded samples
void reflect_pad_adjoint(const std::vector<double>& dpadded, int pad, size_t wave_len,
                         std::vector<double>& dwave);

uint32_t crc32(const void* bytes, size_t len, uint32_t seed = 0);

}  // namespace vorvq::kernels
