#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "attentron/adam.hpp"
#include "attentron/model.hpp"

namespace attentron {

struct PhaseSchedule {
  int steps = 0;
  double lr = 0.0;
  int decay_step = 0;
  double lr2 = 0.0;
};

/// Training configuration. Defaults form the "full" profile: 30k steps at
/// 1e-3 (1e-4 from 20k) for the single-speaker phase, then 70k at 1e-4
/// (1e-5 from 50k), batch 16.
struct TrainConfig {
  ModelConfig model = ModelConfig::full();
  PhaseSchedule phase1{30000, 1e-3, 20000, 1e-4};
  PhaseSchedule phase2{70000, 1e-4, 50000, 1e-5};
  int batch_size = 16;
  int n_refs_train = 8;
  bool include_target_in_refs = false;
  AdamHyper adam;
  std::uint64_t seed = 1;
  int log_every = 50;
  int checkpoint_every = 1000;
  int threads = 1;

  std::filesystem::path manifest_phase1;
  std::filesystem::path manifest_phase2;
  std::filesystem::path cache_dir;
  std::filesystem::path checkpoint_dir;
  /// Speakers excluded from phase-2 training (held out for evaluation).
  std::vector<std::string> held_out_speakers;

  const PhaseSchedule& schedule(int phase) const;

  /// Throws ConfigError for inconsistent values.
  void validate() const;

  static TrainConfig full();
  /// Desk-scale profile: every width 64, short phases.
  static TrainConfig toy();
};

/// Learning rate at `step` (0-based) of `phase` (1 or 2): piecewise
/// constant, dropping once at the phase's decay step.
double lr_schedule(int step, int phase, const TrainConfig& cfg);

/// `key = value` lines, `#` comments. An optional `profile = full|toy`
/// selects the starting defaults wherever it appears. Unknown keys throw
/// ConfigError with the line number. Relative paths resolve against
/// `base_dir`.
TrainConfig parse_train_config(std::string_view text, const std::filesystem::path& base_dir = {},
                               const std::string& source = "config");
TrainConfig load_train_config(const std::filesystem::path& path);

/// Applies one key (model keys included); returns false if unknown.
bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value,
                     const std::filesystem::path& base_dir = {});

/// Resolved configuration as `key = value` lines (reproducibility header).
std::string format_train_config(const TrainConfig& cfg);

}  // namespace attentron
