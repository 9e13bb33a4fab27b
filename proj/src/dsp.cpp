#include "vorvq/dsp.hpp"

#include <cmath>

#include "vorvq/kernels.hpp"

namespace vorvq::dsp {

void MelConfig::validate() const {
    VORVQ_CHECK(sample_rate > 0.0, "mel: sample rate must be positive");
    VORVQ_CHECK(n_fft > 0 && (n_fft & (n_fft - 1)) == 0, "mel: n_fft must be a power of two");
    VORVQ_CHECK(hop > 0 && hop <= n_fft, "mel: hop must be in (0, n_fft]");
    VORVQ_CHECK(n_mels >= 1, "mel: need at least one filter");
    VORVQ_CHECK(f_min >= 0.0 && f_min < f_max, "mel: need 0 <= f_min < f_max");
    VORVQ_CHECK(f_max <= sample_rate / 2.0, "mel: f_max above Nyquist");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Mat stft_magnitude(const std::vector<double>& wave, int n_fft, int hop) {
    VORVQ_CHECK(wave.size() >= static_cast<size_t>(n_fft), "stft: waveform shorter than n_fft");
    const kernels::StftPlan plan = kernels::make_stft_plan(n_fft, hop);
    const std::vector<double> padded = kernels::reflect_pad(wave, n_fft / 2);
    Mat mag(plan.n_bins, kernels::stft_frame_count(plan, wave.size()));
    kernels::stft_mag_frames(plan, padded, mag);
    return mag;
}

Mat mel_filterbank(const MelConfig& cfg) {
    cfg.validate();
    const int n_bins = cfg.n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(cfg.f_min);
    const double mel_hi = hz_to_mel(cfg.f_max);

    // n_mels + 2 corner points uniformly spaced on the mel scale
    std::vector<double> corners(cfg.n_mels + 2);
    for (int i = 0; i < cfg.n_mels + 2; ++i)
        corners[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));

    Mat fb(cfg.n_mels, n_bins);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double left = corners[m], center = corners[m + 1], right = corners[m + 2];
        bool nonempty = false;
        for (int k = 0; k < n_bins; ++k) {
            const double f = k * cfg.sample_rate / cfg.n_fft;
            double w = 0.0;
            if (f > left && f < center)
                w = (f - left) / (center - left);
            else if (f == center)
                w = 1.0;
            else if (f > center && f < right)
                w = (right - f) / (right - center);
            fb(m, k) = w;
            if (w > 0.0) nonempty = true;
        }
        VORVQ_CHECK(nonempty, "mel: empty filter, reduce n_mels or raise n_fft");
    }
    return fb;
}

double mel_l2_loss(const std::vector<double>& a, const std::vector<double>& b,
                   const MelConfig& cfg) {
    VORVQ_CHECK(a.size() == b.size(), "mel_l2: waveform length mismatch");
    const Mat fb = mel_filterbank(cfg);
    const Mat mag_a = stft_magnitude(a, cfg.n_fft, cfg.hop);
    const Mat mag_b = stft_magnitude(b, cfg.n_fft, cfg.hop);
    Mat mel_a, mel_b;
    kernels::matmul(fb, mag_a, mel_a);
    kernels::matmul(fb, mag_b, mel_b);
    double acc = 0.0;
    for (size_t i = 0; i < mel_a.data.size(); ++i) {
        const double d = mel_a.data[i] - mel_b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(mel_a.numel());
}

int mel_magnitude_node(grad::Tape& tape, int wave, const MelConfig& cfg) {
    cfg.validate();
    const int mag = tape.stft_mag(wave, cfg.n_fft, cfg.hop);
    const int fb = tape.constant(mel_filterbank(cfg));
    return tape.matmul(fb, mag);
}

int mel_l2_node(grad::Tape& tape, int wave, const std::vector<double>& target,
                const MelConfig& cfg) {
    VORVQ_CHECK(static_cast<size_t>(tape.value(wave).cols) == target.size(),
                "mel_l2: waveform length mismatch");
    const int mel = mel_magnitude_node(tape, wave, cfg);
    Mat tw(1, static_cast<int>(target.size()));
    std::copy(target.begin(), target.end(), tw.row(0));
    grad::Tape scratch;  // target mel is a constant; no need to tape its DFT
    const int tmag = mel_magnitude_node(scratch, scratch.constant(std::move(tw)), cfg);
    const int target_mel = tape.constant(scratch.value(tmag));
    return tape.mean(tape.square(tape.sub(mel, target_mel)));
}

}  // namespace vorvq::dsp
