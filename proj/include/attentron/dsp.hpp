#pragma once

#include <complex>
#include <filesystem>
#include <span>
#include <vector>

#include "attentron/tensor.hpp"

namespace attentron::dsp {

inline constexpr int kSampleRate = 16000;
inline constexpr int kWindowLength = 1024;  // 64 ms
inline constexpr int kHopLength = 256;      // 16 ms
inline constexpr int kFftSize = 2048;
inline constexpr int kNumBins = kFftSize / 2 + 1;
inline constexpr int kNumMels = 80;
inline constexpr double kMelFmin = 125.0;
inline constexpr double kMelFmax = 7600.0;
inline constexpr double kLogFloor = 1e-5;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Log-mel energies, one row per 16 ms frame.
struct MelSpectrogram {
  Mat<float> frames;  // [L, n_mels]

  Eigen::Index n_frames() const { return frames.rows(); }
  Eigen::Index n_mels() const { return frames.cols(); }
};

// --- WAV -------------------------------------------------------------------

/// Reads a RIFF/WAVE PCM-16 file (mono, or stereo averaged to mono), scales
/// by 1/32768 and resamples to 16 kHz when needed.
Waveform load_wav(const std::filesystem::path& path);
Waveform parse_wav(const std::vector<unsigned char>& bytes);

/// Writes mono PCM-16; samples are clamped to [-1, 1).
void save_wav(const std::filesystem::path& path, const Waveform& w);
std::vector<unsigned char> encode_wav(const Waveform& w);

/// Linear-interpolation resampling.
Waveform resample_linear(const Waveform& w, int target_rate);

// --- Feature pipeline ------------------------------------------------------

/// Drops leading and trailing 25 ms frames (10 ms hop) whose RMS is more
/// than `threshold_db` below the loudest frame. All-silent input yields an
/// empty waveform.
Waveform trim_silence(const Waveform& w, double threshold_db = 60.0);

/// Number of frames produced by `stft` for a signal of `n_samples`.
Eigen::Index stft_frame_count(std::size_t n_samples);

/// Magnitude STFT: 1024-sample periodic Hann window, hop 256, zero-padded
/// 2048-point FFT, no centre padding. [L, 1025].
Mat<double> stft(const Waveform& w);

using ComplexMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic,
                                 Eigen::Dynamic, Eigen::RowMajor>;
ComplexMat stft_complex(std::span<const double> samples);

/// Overlap-add inverse of `stft_complex` with squared-window normalisation.
std::vector<double> istft(const ComplexMat& spec);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterbank {
  Mat<double> weights;  // [n_mels, n_fft/2 + 1]
  std::vector<double> center_hz;
  double fmin = kMelFmin;
  double fmax = kMelFmax;
  int sample_rate = kSampleRate;
  int n_fft = kFftSize;
};

/// Peak-1 triangular filters with centres uniform on the mel scale.
MelFilterbank mel_filterbank(int n_fft = kFftSize, int n_mels = kNumMels,
                             double fmin = kMelFmin, double fmax = kMelFmax,
                             int sample_rate = kSampleRate);

/// Shared canonical filterbank.
const MelFilterbank& canonical_filterbank();

/// log(max(fb * mag^T, 1e-5)) per frame.
MelSpectrogram log_mel(const Mat<double>& magnitudes, const MelFilterbank& fb);

/// trim_silence -> stft -> log_mel with the canonical configuration.
MelSpectrogram featurize(const Waveform& w);

/// Orthonormal DCT-II over each frame's mel bins; coefficients 1..n_coeffs.
Mat<double> mel_cepstrum(const MelSpectrogram& m, int n_coeffs = 13);

struct GriffinLimResult {
  Waveform waveform;
  std::vector<double> spectral_convergence;  // one entry per iteration
};

/// Approximate waveform from a log-mel spectrogram: pseudo-inverse of the
/// filterbank, then Griffin-Lim phase recovery from zero phase.
GriffinLimResult griffin_lim(const MelSpectrogram& m, int iterations = 32);

// --- Feature cache ("MELS" v1) ---------------------------------------------

std::vector<unsigned char> encode_mels(const MelSpectrogram& m);
MelSpectrogram decode_mels(const std::vector<unsigned char>& bytes);
void write_mels(const std::filesystem::path& path, const MelSpectrogram& m);
MelSpectrogram read_mels(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      const std::vector<unsigned char>& bytes);

}  // namespace attentron::dsp
