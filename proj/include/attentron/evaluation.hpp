#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "attentron/manifest.hpp"
#include "attentron/metrics.hpp"
#include "attentron/synthesizer.hpp"

namespace attentron {

struct EvalOptions {
  std::size_t refs_per_utt = 8;
  std::uint64_t seed = 1;
  std::size_t max_frames = 0;  // 0: default cap
  std::filesystem::path cache_dir;
  /// Optional directory receiving `<utterance_id>.mel` for every synthesis.
  std::filesystem::path save_mels_dir;
  int threads = 1;
};

/// For every manifest entry: samples refs_per_utt other utterances of the
/// same speaker (seeded by (seed, entry index)), synthesizes the entry's
/// text, and scores it against the entry's own features. Similarity uses
/// `embedder`'s coarse encoder and is NaN without one. Records keep manifest
/// order whatever the thread count.
std::vector<metrics::EvalRecord> evaluate_manifest(const Model<float>& model,
                                                   const Model<float>* embedder,
                                                   const Manifest& manifest,
                                                   const EvalOptions& opts);

/// Worker count from ATTENTRON_THREADS (default 1, at least 1).
int threads_from_env();

}  // namespace attentron
