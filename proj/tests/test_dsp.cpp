#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "attentron/dsp.hpp"
#include "attentron/random.hpp"

using namespace attentron;
using namespace attentron::dsp;

namespace {

Waveform tone(double hz, double seconds, double amp = 0.5, int rate = kSampleRate) {
  Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<std::size_t>(seconds * rate);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples.push_back(static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / rate)));
  }
  return w;
}

}  // namespace

TEST_CASE("wav encode and parse round-trip pcm16") {
  Waveform w = tone(440, 0.1);
  const Waveform back = parse_wav(encode_wav(w));
  REQUIRE(back.samples.size() == w.samples.size());
  CHECK(back.sample_rate == kSampleRate);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    CHECK(std::abs(back.samples[i] - w.samples[i]) <= 1.0f / 32768.0f);
  }
}

TEST_CASE("wav parser rejects garbage") {
  CHECK_THROWS(parse_wav({'R', 'I', 'F', 'F', 0, 0}));
  std::vector<unsigned char> bytes = encode_wav(tone(100, 0.01));
  bytes[8] = 'X';
  CHECK_THROWS_AS(parse_wav(bytes), FormatError);
}

TEST_CASE("resampling to 16 kHz preserves duration") {
  const Waveform w = tone(300, 0.5, 0.5, 22050);
  const Waveform r = resample_linear(w, kSampleRate);
  CHECK(r.sample_rate == kSampleRate);
  CHECK(std::abs(static_cast<double>(r.samples.size()) - 8000.0) <= 1.0);
}

TEST_CASE("stft frame count and tone peak bin") {
  CHECK(stft_frame_count(1023) == 0);
  CHECK(stft_frame_count(1024) == 1);
  CHECK(stft_frame_count(1024 + 256 * 3) == 4);
  const Waveform w = tone(1000, 0.25);
  const Mat<double> mag = stft(w);
  CHECK(mag.cols() == kNumBins);
  Eigen::Index peak;
  mag.row(2).maxCoeff(&peak);
  // Bin spacing is 16000 / 2048 = 7.8125 Hz; 1000 Hz is bin 128.
  CHECK(peak == 128);
}

TEST_CASE("istft inverts stft_complex away from the edges") {
  Rng rng(9);
  std::vector<double> x(4096);
  for (auto& v : x) v = rng.uniform(-0.5, 0.5);
  const std::vector<double> y = istft(stft_complex(x));
  REQUIRE(y.size() >= 3000);
  double worst = 0.0;
  for (std::size_t i = 1024; i < 3000; ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("mel scale round-trips and the filterbank covers the band") {
  for (double hz : {125.0, 1000.0, 7600.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz));
  const MelFilterbank& fb = canonical_filterbank();
  CHECK(fb.weights.rows() == kNumMels);
  CHECK(fb.weights.cols() == kNumBins);
  CHECK(fb.weights.minCoeff() >= 0.0);
  CHECK(fb.weights.maxCoeff() <= 1.0 + 1e-12);
  // No weight outside [fmin, fmax].
  const double bin_hz = static_cast<double>(kSampleRate) / kFftSize;
  for (Eigen::Index k = 0; k < fb.weights.cols(); ++k) {
    const double f = k * bin_hz;
    if (f < kMelFmin - 1e-9 || f > kMelFmax + 1e-9) CHECK(fb.weights.col(k).sum() == 0.0);
  }
  for (std::size_t i = 1; i < fb.center_hz.size(); ++i) CHECK(fb.center_hz[i] > fb.center_hz[i - 1]);
}

TEST_CASE("log mel floors silence at log(1e-5)") {
  const Mat<double> mag = Mat<double>::Zero(3, kNumBins);
  const MelSpectrogram m = log_mel(mag, canonical_filterbank());
  CHECK(m.n_frames() == 3);
  CHECK(m.n_mels() == kNumMels);
  CHECK(m.frames.maxCoeff() == doctest::Approx(std::log(1e-5)));
}

TEST_CASE("trim_silence drops quiet edges and empties pure silence") {
  Waveform w;
  w.samples.assign(8000, 0.0f);
  const Waveform t = tone(500, 0.5);
  w.samples.insert(w.samples.end(), t.samples.begin(), t.samples.end());
  w.samples.insert(w.samples.end(), 8000, 0.0f);
  const Waveform trimmed = trim_silence(w);
  CHECK(trimmed.samples.size() < w.samples.size());
  CHECK(trimmed.samples.size() >= t.samples.size() - 400);
  Waveform silent;
  silent.samples.assign(4000, 0.0f);
  CHECK(trim_silence(silent).samples.empty());
}

TEST_CASE("mel cepstrum is the orthonormal dct-ii without c0") {
  Rng rng(11);
  MelSpectrogram m;
  m.frames.resize(2, kNumMels);
  for (Eigen::Index i = 0; i < m.frames.size(); ++i) m.frames.data()[i] = static_cast<float>(rng.normal());
  const Mat<double> c = mel_cepstrum(m, 13);
  REQUIRE(c.cols() == 13);
  const double n = kNumMels;
  for (int k = 1; k <= 13; ++k) {
    double s = 0.0;
    for (int j = 0; j < kNumMels; ++j) {
      s += m.frames(1, j) * std::cos(std::numbers::pi * k * (j + 0.5) / n);
    }
    CHECK(c(1, k - 1) == doctest::Approx(s * std::sqrt(2.0 / n)).epsilon(1e-9));
  }
}

TEST_CASE("mels cache encoding is bitwise stable") {
  Rng rng(12);
  MelSpectrogram m;
  m.frames.resize(5, kNumMels);
  for (Eigen::Index i = 0; i < m.frames.size(); ++i) m.frames.data()[i] = static_cast<float>(rng.normal());
  const auto bytes = encode_mels(m);
  const MelSpectrogram back = decode_mels(bytes);
  CHECK(back.frames == m.frames);
  CHECK(encode_mels(back) == bytes);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_mels(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS(decode_mels(bad));
}

TEST_CASE("griffin-lim output has the expected length and converges") {
  const Waveform w = tone(440, 0.5, 0.3);
  const MelSpectrogram m = featurize(w);
  const GriffinLimResult r = griffin_lim(m, 16);
  CHECK(r.spectral_convergence.size() == 16);
  CHECK(r.spectral_convergence.back() <= r.spectral_convergence.front());
  const auto expect = static_cast<std::size_t>(kWindowLength + (m.n_frames() - 1) * kHopLength);
  CHECK(r.waveform.samples.size() == expect);
}
