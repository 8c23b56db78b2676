#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attentron/checkpoint.hpp"
#include "attentron/config.hpp"
#include "attentron/dsp.hpp"
#include "attentron/manifest.hpp"

namespace attentron {

/// `<cache_dir>/<utterance_id>.mels`.
std::filesystem::path feature_cache_path(const std::filesystem::path& cache_dir,
                                         const ManifestEntry& e);

/// Reads the cached features when the cache file is at least as new as the
/// WAV; otherwise featurizes and (with a non-empty cache_dir) writes the
/// cache. Throws LengthError when the trimmed audio is shorter than one
/// analysis window.
dsp::MelSpectrogram load_features(const Manifest& m, std::size_t index,
                                  const std::filesystem::path& cache_dir);

struct FeaturizeReport {
  std::size_t written = 0;
  std::size_t skipped = 0;  // cache already up to date
  std::vector<std::string> errors;
};

/// Featurizes every entry into the cache, logging per-file failures.
FeaturizeReport featurize_manifest(const Manifest& m, const std::filesystem::path& cache_dir);

/// Loads each manifest entry's features once.
class FeatureStore {
 public:
  FeatureStore(const Manifest& m, std::filesystem::path cache_dir);
  const Mat<float>& operator[](std::size_t index) const { return mels_[index]; }

 private:
  std::vector<Mat<float>> mels_;
};

struct LossRecord {
  int step = 0;  // 1-based step within the phase
  int phase = 1;
  double lr = 0.0;
  double loss = 0.0;
};

/// Exponential moving average with factor `decay`, seeded by the first value.
std::vector<double> ema_smooth(const std::vector<double>& values, double decay = 0.98);

enum class PhaseSelection { phase1, phase2, both };

struct TrainOptions {
  PhaseSelection phases = PhaseSelection::both;
  std::optional<std::filesystem::path> resume;
  std::ostream* log = nullptr;
  /// Stops after this many optimizer steps in this invocation (and writes a
  /// checkpoint); negative runs to completion.
  int max_steps = -1;
};

struct TrainResult {
  std::vector<LossRecord> losses;  // every step run by this invocation
  std::filesystem::path last_checkpoint;
  CheckpointMeta meta;
};

/// Names used inside checkpoint_dir.
std::filesystem::path step_checkpoint_path(const std::filesystem::path& dir, int phase, int step);
std::filesystem::path final_checkpoint_path(const std::filesystem::path& dir, int phase);
std::filesystem::path loss_log_path(const std::filesystem::path& dir);

/// Warm-start training: phase 1 on manifest_phase1, then phase 2 on
/// manifest_phase2 minus held-out speakers, starting from the phase-1
/// weights with fresh optimizer moments. Each step samples batch_size
/// targets and n_refs_train same-speaker references from a stream seeded by
/// (seed, phase, step), so a resumed run replays an uninterrupted one.
/// A non-finite loss or gradient writes `diverged.ckpt` and throws
/// TrainingError.
TrainResult train(const TrainConfig& cfg, const TrainOptions& opts = {});

/// Parses `step,phase,lr,loss` CSV.
std::vector<LossRecord> read_loss_log(const std::filesystem::path& path);

}  // namespace attentron
