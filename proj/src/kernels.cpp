#include "vorvq/kernels.hpp"

#include <atomic>
#include <cmath>

namespace vorvq::kernels {

namespace {
std::atomic<bool> g_parallel{true};

const double kTwoPi = 6.283185307179586476925286766559;
}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

// ---- matmul -------------------------------------------------------------

namespace {

// one output row of C = A * B; k ascending so the rounding sequence matches
// the naive i,j,k triple loop
inline void matmul_row(const Mat& a, const Mat& b, Mat& c, int i) {
    double* crow = c.row(i);
    for (int j = 0; j < c.cols; ++j) crow[j] = 0.0;
    const double* arow = a.row(i);
    for (int k = 0; k < a.cols; ++k) {
        const double aik = arow[k];
        const double* brow = b.row(k);
        for (int j = 0; j < c.cols; ++j) crow[j] += aik * brow[j];
    }
}

inline void matmul_nt_row(const Mat& a, const Mat& b, Mat& c, int i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (int j = 0; j < c.cols; ++j) {
        const double* brow = b.row(j);
        double acc = 0.0;
        for (int k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
        crow[j] = acc;
    }
}

inline void matmul_tn_row(const Mat& a, const Mat& b, Mat& c, int i) {
    // row i of C = A^T * B reads column i of A
    double* crow = c.row(i);
    for (int j = 0; j < c.cols; ++j) crow[j] = 0.0;
    for (int k = 0; k < a.rows; ++k) {
        const double aki = a(k, i);
        const double* brow = b.row(k);
        for (int j = 0; j < c.cols; ++j) crow[j] += aki * brow[j];
    }
}

}  // namespace

void matmul_serial(const Mat& a, const Mat& b, Mat& c) {
    VORVQ_CHECK(a.cols == b.rows, "matmul: inner dimensions differ");
    c = Mat(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) matmul_row(a, b, c, i);
}

void matmul(const Mat& a, const Mat& b, Mat& c) {
    VORVQ_CHECK(a.cols == b.rows, "matmul: inner dimensions differ");
    c = Mat(a.rows, b.cols);
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < a.rows; ++i) matmul_row(a, b, c, i);
    } else {
        for (int i = 0; i < a.rows; ++i) matmul_row(a, b, c, i);
    }
}

void matmul_nt_serial(const Mat& a, const Mat& b, Mat& c) {
    VORVQ_CHECK(a.cols == b.cols, "matmul_nt: inner dimensions differ");
    c = Mat(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) matmul_nt_row(a, b, c, i);
}

void matmul_nt(const Mat& a, const Mat& b, Mat& c) {
    VORVQ_CHECK(a.cols == b.cols, "matmul_nt: inner dimensions differ");
    c = Mat(a.rows, b.rows);
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < a.rows; ++i) matmul_nt_row(a, b, c, i);
    } else {
        for (int i = 0; i < a.rows; ++i) matmul_nt_row(a, b, c, i);
    }
}

void matmul_tn_serial(const Mat& a, const Mat& b, Mat& c) {
    VORVQ_CHECK(a.rows == b.rows, "matmul_tn: inner dimensions differ");
    c = Mat(a.cols, b.cols);
    for (int i = 0; i < a.cols; ++i) matmul_tn_row(a, b, c, i);
}

void matmul_tn(const Mat& a, const Mat& b, Mat& c) {
    VORVQ_CHECK(a.rows == b.rows, "matmul_tn: inner dimensions differ");
    c = Mat(a.cols, b.cols);
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < a.cols; ++i) matmul_tn_row(a, b, c, i);
    } else {
        for (int i = 0; i < a.cols; ++i) matmul_tn_row(a, b, c, i);
    }
}

// ---- distances ------------------------------------------------------------

namespace {

inline double sqdist(const double* x, const double* y, int d) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k) {
        const double diff = x[k] - y[k];
        acc += diff * diff;
    }
    return acc;
}

inline void pairwise_row(const Mat& x, Mat& d, int i) {
    for (int j = 0; j < x.rows; ++j)
        d(i, j) = (i == j) ? 0.0 : sqdist(x.row(i), x.row(j), x.cols);
}

inline void nearest_one(const Mat& x, const Mat& codes, int i, int* idx, double* dist) {
    const double* row = x.row(i);
    int best = 0;
    double best_d = sqdist(row, codes.row(0), x.cols);
    for (int k = 1; k < codes.rows; ++k) {
        const double dk = sqdist(row, codes.row(k), x.cols);
        if (dk < best_d) {
            best_d = dk;
            best = k;
        }
    }
    idx[i] = best;
    dist[i] = best_d;
}

}  // namespace

void pairwise_sqdist_serial(const Mat& x, Mat& d) {
    d = Mat(x.rows, x.rows);
    for (int i = 0; i < x.rows; ++i) pairwise_row(x, d, i);
}

void pairwise_sqdist(const Mat& x, Mat& d) {
    d = Mat(x.rows, x.rows);
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < x.rows; ++i) pairwise_row(x, d, i);
    } else {
        for (int i = 0; i < x.rows; ++i) pairwise_row(x, d, i);
    }
}

void nearest_rows_serial(const Mat& x, const Mat& codes, int* idx, double* dist) {
    VORVQ_CHECK(x.cols == codes.cols, "nearest_rows: dimension mismatch");
    VORVQ_CHECK(codes.rows >= 1, "nearest_rows: empty codebook");
    for (int i = 0; i < x.rows; ++i) nearest_one(x, codes, i, idx, dist);
}

void nearest_rows(const Mat& x, const Mat& codes, int* idx, double* dist) {
    VORVQ_CHECK(x.cols == codes.cols, "nearest_rows: dimension mismatch");
    VORVQ_CHECK(codes.rows >= 1, "nearest_rows: empty codebook");
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < x.rows; ++i) nearest_one(x, codes, i, idx, dist);
    } else {
        for (int i = 0; i < x.rows; ++i) nearest_one(x, codes, i, idx, dist);
    }
}

// ---- symmetric matvec -------------------------------------------------------

void symv_serial(const Mat& a, const std::vector<double>& x, std::vector<double>& y) {
    y.assign(a.rows, 0.0);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double acc = 0.0;
        for (int j = 0; j < a.cols; ++j) acc += arow[j] * x[j];
        y[i] = acc;
    }
}

void symv(const Mat& a, const std::vector<double>& x, std::vector<double>& y) {
    y.assign(a.rows, 0.0);
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < a.rows; ++i) {
            const double* arow = a.row(i);
            double acc = 0.0;
            for (int j = 0; j < a.cols; ++j) acc += arow[j] * x[j];
            y[i] = acc;
        }
    } else {
        symv_serial(a, x, y);
    }
}

// ---- windowed DFT magnitudes ------------------------------------------------

StftPlan make_stft_plan(int n_fft, int hop) {
    VORVQ_CHECK(n_fft > 0 && hop > 0, "stft: n_fft and hop must be positive");
    VORVQ_CHECK(hop <= n_fft, "stft: hop must not exceed n_fft");
    StftPlan plan;
    plan.n_fft = n_fft;
    plan.hop = hop;
    plan.n_bins = n_fft / 2 + 1;
    plan.window.resize(n_fft);
    for (int n = 0; n < n_fft; ++n)
        plan.window[n] = 0.5 * (1.0 - std::cos(kTwoPi * n / n_fft));
    plan.cos_table.resize(static_cast<size_t>(plan.n_bins) * n_fft);
    plan.sin_table.resize(static_cast<size_t>(plan.n_bins) * n_fft);
    for (int k = 0; k < plan.n_bins; ++k) {
        for (int n = 0; n < n_fft; ++n) {
            const double phase = kTwoPi * k * n / n_fft;
            plan.cos_table[static_cast<size_t>(k) * n_fft + n] = std::cos(phase);
            plan.sin_table[static_cast<size_t>(k) * n_fft + n] = std::sin(phase);
        }
    }
    return plan;
}

std::vector<double> reflect_pad(const std::vector<double>& wave, int pad) {
    VORVQ_CHECK(static_cast<size_t>(pad) < wave.size(), "reflect_pad: signal shorter than pad");
    std::vector<double> out(wave.size() + 2 * static_cast<size_t>(pad));
    for (int i = 0; i < pad; ++i) out[i] = wave[pad - i];
    for (size_t i = 0; i < wave.size(); ++i) out[pad + i] = wave[i];
    const size_t n = wave.size();
    for (int i = 0; i < pad; ++i) out[pad + n + i] = wave[n - 2 - i];
    return out;
}

int stft_frame_count(const StftPlan& plan, size_t wave_len) {
    return static_cast<int>(wave_len / plan.hop) + 1;
}

namespace {

inline void stft_frame(const StftPlan& plan, const std::vector<double>& padded, Mat& mag, int t) {
    const int n_fft = plan.n_fft;
    const double* frame = padded.data() + static_cast<size_t>(t) * plan.hop;
    std::vector<double> wx(n_fft);
    for (int n = 0; n < n_fft; ++n) wx[n] = plan.window[n] * frame[n];
    for (int k = 0; k < plan.n_bins; ++k) {
        const double* ct = plan.cos_table.data() + static_cast<size_t>(k) * n_fft;
        const double* st = plan.sin_table.data() + static_cast<size_t>(k) * n_fft;
        double re = 0.0, im = 0.0;
        for (int n = 0; n < n_fft; ++n) {
            re += wx[n] * ct[n];
            im -= wx[n] * st[n];
        }
        mag(k, t) = std::sqrt(re * re + im * im);
    }
}

}  // namespace

void stft_mag_frames_serial(const StftPlan& plan, const std::vector<double>& padded, Mat& mag) {
    const int frames = mag.cols;
    for (int t = 0; t < frames; ++t) stft_frame(plan, padded, mag, t);
}

void stft_mag_frames(const StftPlan& plan, const std::vector<double>& padded, Mat& mag) {
    const int frames = mag.cols;
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int t = 0; t < frames; ++t) stft_frame(plan, padded, mag, t);
    } else {
        for (int t = 0; t < frames; ++t) stft_frame(plan, padded, mag, t);
    }
}

void stft_mag_adjoint(const StftPlan& plan, const std::vector<double>& padded, const Mat& mag,
                      const Mat& dmag, std::vector<double>& dpadded) {
    const int n_fft = plan.n_fft;
    const int frames = mag.cols;
    // per-frame sample gradients first (frames are independent), then a
    // deterministic gather over the overlapping frames of each sample
    Mat gframe(frames, n_fft);
    auto frame_grad = [&](int t) {
        const double* frame = padded.data() + static_cast<size_t>(t) * plan.hop;
        std::vector<double> wx(n_fft);
        for (int n = 0; n < n_fft; ++n) wx[n] = plan.window[n] * frame[n];
        double* grow = gframe.row(t);
        for (int k = 0; k < plan.n_bins; ++k) {
            const double m = mag(k, t);
            const double g = dmag(k, t);
            if (m == 0.0 || g == 0.0) continue;
            const double* ct = plan.cos_table.data() + static_cast<size_t>(k) * n_fft;
            const double* st = plan.sin_table.data() + static_cast<size_t>(k) * n_fft;
            double re = 0.0, im = 0.0;
            for (int n = 0; n < n_fft; ++n) {
                re += wx[n] * ct[n];
                im -= wx[n] * st[n];
            }
            const double gre = g * re / m;
            const double gim = g * im / m;
            for (int n = 0; n < n_fft; ++n) grow[n] += gre * ct[n] - gim * st[n];
        }
        for (int n = 0; n < n_fft; ++n) grow[n] *= plan.window[n];
    };
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (int t = 0; t < frames; ++t) frame_grad(t);
    } else {
        for (int t = 0; t < frames; ++t) frame_grad(t);
    }

    dpadded.assign(padded.size(), 0.0);
    const long long n_samples = static_cast<long long>(dpadded.size());
    // frames overlapping sample i: t*hop <= i < t*hop + n_fft
    const auto gather = [&](long long i) {
        long long t_lo = (i < n_fft) ? 0 : (i - n_fft) / plan.hop + 1;
        long long t_hi = i / plan.hop;
        if (t_hi >= frames) t_hi = frames - 1;
        double acc = 0.0;
        for (long long t = t_lo; t <= t_hi; ++t)
            acc += gframe(static_cast<int>(t), static_cast<int>(i - t * plan.hop));
        dpadded[static_cast<size_t>(i)] = acc;
    };
    if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < n_samples; ++i) gather(i);
    } else {
        for (long long i = 0; i < n_samples; ++i) gather(i);
    }
}

void reflect_pad_adjoint(const std::vector<double>& dpadded, int pad, size_t wave_len,
                         std::vector<double>& dwave) {
    dwave.assign(wave_len, 0.0);
    for (int i = 0; i < pad; ++i) dwave[pad - i] += dpadded[i];
    for (size_t i = 0; i < wave_len; ++i) dwave[i] += dpadded[pad + i];
    for (int i = 0; i < pad; ++i) dwave[wave_len - 2 - i] += dpadded[pad + wave_len + i];
}

// ---- crc32 (IEEE 802.3, reflected) -----------------------------------------

namespace {

const uint32_t* crc_table() {
    static uint32_t table[256];
    static bool init = [] {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        return true;
    }();
    (void)init;
    return table;
}

}  // namespace

uint32_t crc32(const void* bytes, size_t len, uint32_t seed) {
    const uint8_t* p = static_cast<const uint8_t*>(bytes);
    const uint32_t* table = crc_table();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

}  // namespace vorvq::kernels
