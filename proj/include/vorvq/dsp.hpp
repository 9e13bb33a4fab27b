#pragma once

// STFT magnitudes and mel filterbank kernels behind the spectral
// reconstruction terms. Conventions: periodic Hann window, reflect-padded
// centered frames, linear magnitudes (no log compression), HTK mel scale
// with peak-1 triangles.

#include <vector>

#include "vorvq/gradcore.hpp"
#include "vorvq/mat.hpp"

namespace vorvq::dsp {

struct MelConfig {
    double sample_rate = 16000.0;
    int n_fft = 512;
    int hop = 128;
    int n_mels = 40;
    double f_min = 0.0;
    double f_max = 8000.0;

    void validate() const;
};

double hz_to_mel(double hz);   // 2595 * log10(1 + f/700)
double mel_to_hz(double mel);

// magnitude spectrogram, (n_fft/2 + 1) x n_frames
Mat stft_magnitude(const std::vector<double>& wave, int n_fft, int hop);

// n_mels x (n_fft/2 + 1); throws if any filter covers no bin
Mat mel_filterbank(const MelConfig& cfg);

// mean squared difference of mel magnitudes
double mel_l2_loss(const std::vector<double>& a, const std::vector<double>& b,
                   const MelConfig& cfg);

// tape node: mel magnitudes of a waveform node (filterbank enters as a
// constant, so the gradient flows into the waveform)
int mel_magnitude_node(grad::Tape& tape, int wave, const MelConfig& cfg);

// tape node: mel_l2_loss against a fixed target waveform
int mel_l2_node(grad::Tape& tape, int wave, const std::vector<double>& target,
                const MelConfig& cfg);

}  // namespace vorvq::dsp
