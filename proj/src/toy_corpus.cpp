#include "attentron/toy_corpus.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "attentron/errors.hpp"

namespace attentron {

namespace {

constexpr double kPi = std::numbers::pi;

// Index k of a..j: pitch 0.80 + 0.05k; durations cycle around 1.
constexpr double kDurations[10] = {1.0, 0.8, 1.2, 0.9, 1.1, 1.0, 0.85, 1.15, 0.95, 1.05};

std::string format_id(const char* fmt, std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// Unit-peak-gain two-pole resonator.
void resonate(std::vector<double>& x, double freq, double bandwidth) {
  const double r = std::exp(-kPi * bandwidth / dsp::kSampleRate);
  const double theta = 2.0 * kPi * freq / dsp::kSampleRate;
  const double a1 = 2.0 * r * std::cos(theta);
  const double a2 = -r * r;
  const double gain = (1.0 - r) * std::sqrt(1.0 - 2.0 * r * std::cos(2.0 * theta) + r * r);
  double y1 = 0.0, y2 = 0.0;
  for (double& v : x) {
    const double y = gain * v + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

}  // namespace

ToySpeakerSpec toy_speaker(std::uint64_t corpus_seed, std::size_t index) {
  Rng rng(derive_seed({corpus_seed, index, 0x70795370ULL}));
  ToySpeakerSpec s;
  s.speaker_id = format_id("spk%02zu", index);
  s.f0_base = rng.uniform(90.0, 300.0);
  s.resonance1 = rng.uniform(300.0, 1100.0);
  s.resonance2 = rng.uniform(1400.0, 3800.0);
  s.rate = rng.uniform(22.0, 30.0);
  return s;
}

SymbolPattern toy_symbol_pattern(char symbol) {
  const auto k = kToySymbols.find(symbol);
  if (k == std::string_view::npos) {
    throw InputError(std::string("toy symbol '") + symbol + "' is not in a..j");
  }
  return {0.80 + 0.05 * static_cast<double>(k), kDurations[k]};
}

dsp::Waveform render_toy_utterance(const ToySpeakerSpec& spec, std::string_view text,
                                   std::uint64_t noise_seed) {
  if (text.empty()) throw InputError("toy utterance text is empty");
  const double sr = dsp::kSampleRate;

  // Per-sample target f0, smoothed with a 5 ms one-pole filter.
  std::vector<double> f0;
  for (char c : text) {
    const SymbolPattern p = toy_symbol_pattern(c);
    const auto n = static_cast<std::size_t>(std::lround(p.duration_factor / spec.rate * sr));
    f0.insert(f0.end(), n, spec.f0_base * p.pitch_multiplier);
  }
  const double alpha = 1.0 - std::exp(-1.0 / (0.005 * sr));
  double smooth = f0.front();
  std::vector<double> x(f0.size());
  double phase = 0.0;
  for (std::size_t i = 0; i < f0.size(); ++i) {
    smooth += alpha * (f0[i] - smooth);
    const int harmonics = static_cast<int>(dsp::kMelFmax / smooth);
    double v = 0.0;
    for (int h = 1; h <= harmonics; ++h) v += std::cos(h * phase);
    x[i] = v / std::sqrt(static_cast<double>(harmonics));
    phase += 2.0 * kPi * smooth / sr;
    if (phase > 2.0 * kPi) phase -= 2.0 * kPi;
  }
  resonate(x, spec.resonance1, 80.0);
  resonate(x, spec.resonance2, 120.0);

  // 10 ms raised-cosine fades.
  const std::size_t fade = std::min<std::size_t>(x.size() / 2, static_cast<std::size_t>(0.01 * sr));
  for (std::size_t i = 0; i < fade; ++i) {
    const double g = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(i) / fade);
    x[i] *= g;
    x[x.size() - 1 - i] *= g;
  }

  double peak = 0.0, energy = 0.0;
  for (double v : x) {
    peak = std::max(peak, std::abs(v));
    energy += v * v;
  }
  const double scale = peak > 0.0 ? 0.5 / peak : 1.0;
  const double noise_std = 0.01 * std::sqrt(energy / x.size()) * scale;
  Rng rng(noise_seed);
  dsp::Waveform w;
  w.samples.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    w.samples[i] = static_cast<float>(x[i] * scale + noise_std * rng.normal());
  }
  return w;
}

std::string random_toy_text(Rng& rng, std::size_t min_length, std::size_t max_length) {
  if (min_length == 0 || max_length < min_length) {
    throw ConfigError("toy text lengths must satisfy 1 <= min <= max");
  }
  const std::size_t len = min_length + rng.below(max_length - min_length + 1);
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(kToySymbols[rng.below(kToySymbols.size())]);
  return s;
}

Manifest generate_toy_corpus(const ToyCorpusOptions& opts, const std::filesystem::path& out_dir) {
  if (opts.n_speakers < 2) throw ConfigError("toy corpus needs at least 2 speakers");
  if (opts.utts_per_speaker < 2) throw ConfigError("toy corpus needs at least 2 utterances per speaker");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wavs", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "wavs").string() + ": " + ec.message());

  Manifest m;
  m.base_dir = out_dir;
  for (std::size_t s = 0; s < opts.n_speakers; ++s) {
    const ToySpeakerSpec spec = toy_speaker(opts.seed, s);
    Rng text_rng(derive_seed({opts.seed, s, 0x74657874ULL}));
    for (std::size_t u = 0; u < opts.utts_per_speaker; ++u) {
      const std::string text = random_toy_text(text_rng, opts.min_text, opts.max_text);
      const std::string id = spec.speaker_id + format_id("_%03zu", u);
      const std::string rel = "wavs/" + id + ".wav";
      dsp::save_wav(out_dir / rel, render_toy_utterance(spec, text, derive_seed({opts.seed, s, u})));
      m.entries.push_back({id, spec.speaker_id, rel, text});
    }
  }
  write_manifest(out_dir / "manifest.tsv", m);
  return m;
}

}  // namespace attentron
