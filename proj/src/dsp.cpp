#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>

#include "attentron/dsp.hpp"
#include "binary_io.hpp"

namespace attentron::dsp {

namespace {

/// 2048-point real FFT backed by FFTW. The plans are created once; the
/// new-array execute functions are thread-safe.
class RealFft {
 public:
  static const RealFft& instance() {
    static const RealFft fft;
    return fft;
  }

  void forward(const double* in, std::complex<double>* out) const {
    Buffers& b = buffers();
    std::copy(in, in + kFftSize, b.real);
    fftw_execute_dft_r2c(forward_, b.real, b.spec);
    for (int k = 0; k < kNumBins; ++k) out[k] = {b.spec[k][0], b.spec[k][1]};
  }

  /// Unnormalised inverse (scaled by kFftSize).
  void inverse(const std::complex<double>* in, double* out) const {
    Buffers& b = buffers();
    for (int k = 0; k < kNumBins; ++k) {
      b.spec[k][0] = in[k].real();
      b.spec[k][1] = in[k].imag();
    }
    fftw_execute_dft_c2r(inverse_, b.spec, b.real);
    std::copy(b.real, b.real + kFftSize, out);
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

 private:
  struct Buffers {
    Buffers()
        : real(fftw_alloc_real(kFftSize)), spec(fftw_alloc_complex(kNumBins)) {}
    ~Buffers() {
      fftw_free(real);
      fftw_free(spec);
    }
    Buffers(const Buffers&) = delete;
    Buffers& operator=(const Buffers&) = delete;
    double* real;
    fftw_complex* spec;
  };

  static Buffers& buffers() {
    thread_local Buffers b;
    return b;
  }

  RealFft() {
    Buffers tmp;
    forward_ = fftw_plan_dft_r2c_1d(kFftSize, tmp.real, tmp.spec, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(kFftSize, tmp.spec, tmp.real, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }

  fftw_plan forward_;
  fftw_plan inverse_;
};

const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kWindowLength);
    for (int n = 0; n < kWindowLength; ++n) {
      v[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / kWindowLength);
    }
    return v;
  }();
  return w;
}

}  // namespace

Waveform trim_silence(const Waveform& w, double threshold_db) {
  const std::size_t frame = static_cast<std::size_t>(w.sample_rate) * 25 / 1000;
  const std::size_t hop = static_cast<std::size_t>(w.sample_rate) * 10 / 1000;
  const std::size_t n = w.samples.size();
  Waveform out;
  out.sample_rate = w.sample_rate;
  if (n == 0) return out;

  std::vector<double> rms;
  for (std::size_t start = 0; start < n; start += hop) {
    const std::size_t end = std::min(start + frame, n);
    double acc = 0.0;
    for (std::size_t i = start; i < end; ++i) acc += double(w.samples[i]) * w.samples[i];
    rms.push_back(std::sqrt(acc / static_cast<double>(frame)));
  }
  const double peak = *std::max_element(rms.begin(), rms.end());
  if (peak <= 0.0) return out;
  const double threshold = peak * std::pow(10.0, -threshold_db / 20.0);

  std::size_t first = rms.size();
  std::size_t last = 0;
  for (std::size_t f = 0; f < rms.size(); ++f) {
    if (rms[f] >= threshold) {
      first = std::min(first, f);
      last = f;
    }
  }
  const std::size_t begin = first * hop;
  const std::size_t end = std::min(last * hop + frame, n);
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

Eigen::Index stft_frame_count(std::size_t n_samples) {
  if (n_samples < static_cast<std::size_t>(kWindowLength)) return 0;
  return 1 + static_cast<Eigen::Index>((n_samples - kWindowLength) / kHopLength);
}

ComplexMat stft_complex(std::span<const double> samples) {
  const Eigen::Index frames = stft_frame_count(samples.size());
  if (frames == 0) {
    throw LengthError("stft: need at least " + std::to_string(kWindowLength) +
                      " samples, got " + std::to_string(samples.size()));
  }
  const auto& window = hann_window();
  const RealFft& fft = RealFft::instance();
  ComplexMat out(frames, kNumBins);
  std::vector<double> buf(kFftSize, 0.0);
  std::vector<std::complex<double>> spec(kNumBins);
  for (Eigen::Index f = 0; f < frames; ++f) {
    const std::size_t off = static_cast<std::size_t>(f) * kHopLength;
    for (int n = 0; n < kWindowLength; ++n) buf[n] = samples[off + n] * window[n];
    fft.forward(buf.data(), spec.data());
    for (int k = 0; k < kNumBins; ++k) out(f, k) = spec[k];
  }
  return out;
}

Mat<double> stft(const Waveform& w) {
  std::vector<double> samples(w.samples.begin(), w.samples.end());
  return stft_complex(samples).cwiseAbs();
}

std::vector<double> istft(const ComplexMat& spec) {
  const Eigen::Index frames = spec.rows();
  if (frames == 0) return {};
  if (spec.cols() != kNumBins) {
    throw DimensionError("istft: expected " + std::to_string(kNumBins) +
                         " bins, got " + std::to_string(spec.cols()));
  }
  const auto& window = hann_window();
  const RealFft& fft = RealFft::instance();
  const std::size_t n = static_cast<std::size_t>(frames - 1) * kHopLength + kWindowLength;
  std::vector<double> out(n, 0.0);
  std::vector<double> norm(n, 0.0);
  std::vector<std::complex<double>> row(kNumBins);
  std::vector<double> buf(kFftSize);
  for (Eigen::Index f = 0; f < frames; ++f) {
    for (int k = 0; k < kNumBins; ++k) row[k] = spec(f, k);
    fft.inverse(row.data(), buf.data());
    const std::size_t off = static_cast<std::size_t>(f) * kHopLength;
    for (int i = 0; i < kWindowLength; ++i) {
      out[off + i] += buf[i] / kFftSize * window[i];
      norm[off + i] += window[i] * window[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (norm[i] > 1e-8) out[i] /= norm[i];
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(int n_fft, int n_mels, double fmin, double fmax,
                             int sample_rate) {
  if (n_fft <= 0 || n_fft % 2 != 0) {
    throw ConfigError("mel_filterbank: n_fft must be positive and even");
  }
  if (n_mels <= 0) throw ConfigError("mel_filterbank: n_mels must be positive");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw ConfigError("mel_filterbank: invalid band edges fmin=" +
                      std::to_string(fmin) + " fmax=" + std::to_string(fmax) +
                      " at sample rate " + std::to_string(sample_rate));
  }
  const int bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * i / (n_mels + 1));
  }
  MelFilterbank fb;
  fb.fmin = fmin;
  fb.fmax = fmax;
  fb.sample_rate = sample_rate;
  fb.n_fft = n_fft;
  fb.weights = Mat<double>::Zero(n_mels, bins);
  fb.center_hz.assign(edges.begin() + 1, edges.end() - 1);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[m];
    const double center = edges[m + 1];
    const double right = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb.weights(m, k) = w;
    }
  }
  return fb;
}

const MelFilterbank& canonical_filterbank() {
  static const MelFilterbank fb = mel_filterbank();
  return fb;
}

MelSpectrogram log_mel(const Mat<double>& magnitudes, const MelFilterbank& fb) {
  if (magnitudes.cols() != fb.weights.cols()) {
    throw DimensionError("log_mel: magnitude matrix has " +
                         std::to_string(magnitudes.cols()) +
                         " columns, filterbank expects " +
                         std::to_string(fb.weights.cols()));
  }
  const Mat<double> energy = magnitudes * fb.weights.transpose();
  MelSpectrogram out;
  out.frames = energy.unaryExpr([](double e) { return std::log(std::max(e, kLogFloor)); })
                   .cast<float>();
  return out;
}

MelSpectrogram featurize(const Waveform& w) {
  const Waveform base =
      w.sample_rate == kSampleRate ? w : resample_linear(w, kSampleRate);
  return log_mel(stft(trim_silence(base)), canonical_filterbank());
}

Mat<double> mel_cepstrum(const MelSpectrogram& m, int n_coeffs) {
  const Eigen::Index bins = m.n_mels();
  if (n_coeffs < 1 || n_coeffs >= bins) {
    throw DimensionError("mel_cepstrum: need 1 <= n_coeffs < n_mels, got " +
                         std::to_string(n_coeffs) + " for " + std::to_string(bins) +
                         " bins");
  }
  // Rows 1..n_coeffs of the orthonormal DCT-II matrix.
  Mat<double> basis(bins, n_coeffs);
  const double scale = std::sqrt(2.0 / static_cast<double>(bins));
  for (Eigen::Index n = 0; n < bins; ++n) {
    for (int k = 1; k <= n_coeffs; ++k) {
      basis(n, k - 1) =
          scale * std::cos(std::numbers::pi * k * (2.0 * n + 1.0) / (2.0 * bins));
    }
  }
  return m.frames.cast<double>() * basis;
}

GriffinLimResult griffin_lim(const MelSpectrogram& m, int iterations) {
  const MelFilterbank& fb = canonical_filterbank();
  if (m.n_mels() != fb.weights.rows()) {
    throw DimensionError("griffin_lim: expected " + std::to_string(fb.weights.rows()) +
                         " mel bins, got " + std::to_string(m.n_mels()));
  }
  GriffinLimResult result;
  result.waveform.sample_rate = kSampleRate;
  if (m.n_frames() == 0) return result;

  static const Mat<double> pinv =
      fb.weights.completeOrthogonalDecomposition().pseudoInverse();  // [bins, mels]
  const Mat<double> energy = m.frames.cast<double>().array().exp().matrix();
  const Mat<double> target = (energy * pinv.transpose()).cwiseMax(0.0);  // [L, bins]

  ComplexMat spec = target.cast<std::complex<double>>();
  const double target_norm = std::max(target.norm(), 1e-12);
  for (int it = 0; it < iterations; ++it) {
    const std::vector<double> x = istft(spec);
    const ComplexMat rebuilt = stft_complex(x);
    const Mat<double> mag = rebuilt.cwiseAbs();
    result.spectral_convergence.push_back((mag - target).norm() / target_norm);
    for (Eigen::Index f = 0; f < spec.rows(); ++f) {
      for (Eigen::Index k = 0; k < spec.cols(); ++k) {
        const double a = mag(f, k);
        const std::complex<double> phase = a > 1e-12 ? rebuilt(f, k) / a : 1.0;
        spec(f, k) = target(f, k) * phase;
      }
    }
  }
  const std::vector<double> x = istft(spec);
  result.waveform.samples.reserve(x.size());
  for (double v : x) result.waveform.samples.push_back(static_cast<float>(v));
  return result;
}

std::vector<unsigned char> encode_mels(const MelSpectrogram& m) {
  detail::ByteWriter w;
  w.tag("MELS");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(m.n_frames()));
  w.u32(static_cast<std::uint32_t>(m.n_mels()));
  for (Eigen::Index i = 0; i < m.frames.size(); ++i) w.f32(m.frames.data()[i]);
  return std::move(w.data());
}

MelSpectrogram decode_mels(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes, "mel cache");
  if (r.tag() != "MELS") throw FormatError("mel cache: bad magic");
  const std::uint32_t version = r.u32();
  if (version != 1) {
    throw FormatError("mel cache: unsupported version " + std::to_string(version));
  }
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  MelSpectrogram m;
  m.frames.resize(rows, cols);
  r.need(static_cast<std::size_t>(rows) * cols * 4);
  for (Eigen::Index i = 0; i < m.frames.size(); ++i) m.frames.data()[i] = r.f32();
  if (!r.done()) throw FormatError("mel cache: trailing bytes");
  return m;
}

void write_mels(const std::filesystem::path& path, const MelSpectrogram& m) {
  write_file_bytes(path, encode_mels(m));
}

MelSpectrogram read_mels(const std::filesystem::path& path) {
  try {
    return decode_mels(read_file_bytes(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace attentron::dsp
