#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "attentron/dsp.hpp"
#include "attentron/manifest.hpp"

namespace attentron {

/// Synthetic voice: pulse-train pitch, two formant-like resonances and a
/// speaking rate. A pure function of (corpus seed, speaker index).
struct ToySpeakerSpec {
  std::string speaker_id;
  double f0_base = 0.0;     // Hz, [90, 300]
  double resonance1 = 0.0;  // Hz
  double resonance2 = 0.0;  // Hz, resonance1 < resonance2 < 7600
  double rate = 0.0;        // symbols per second
};

ToySpeakerSpec toy_speaker(std::uint64_t corpus_seed, std::size_t index);

/// Toy texts use the symbols a..j.
inline constexpr std::string_view kToySymbols = "abcdefghij";

struct SymbolPattern {
  double pitch_multiplier;
  double duration_factor;  // in units of 1/rate seconds
};

/// Fixed per-symbol pattern; throws InputError outside a..j.
SymbolPattern toy_symbol_pattern(char symbol);

/// Band-limited pulse train at f0_base * multiplier through two cascaded
/// two-pole resonators, plus noise 40 dB below the signal RMS.
dsp::Waveform render_toy_utterance(const ToySpeakerSpec& spec, std::string_view text,
                                   std::uint64_t noise_seed);

std::string random_toy_text(Rng& rng, std::size_t min_length, std::size_t max_length);

struct ToyCorpusOptions {
  std::size_t n_speakers = 10;
  std::size_t utts_per_speaker = 20;
  std::uint64_t seed = 7;
  std::size_t min_text = 12;
  std::size_t max_text = 20;
};

/// Writes `wavs/<utterance>.wav` and `manifest.tsv` under `out_dir` and
/// returns the manifest (wav paths relative to out_dir). Deterministic.
Manifest generate_toy_corpus(const ToyCorpusOptions& opts, const std::filesystem::path& out_dir);

}  // namespace attentron
