#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "attentron/random.hpp"

namespace attentron {

struct ManifestEntry {
  std::string utterance_id;
  std::string speaker_id;
  std::string wav_path;  // as written; relative paths resolve against base_dir
  std::string text;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;

  std::size_t size() const { return entries.size(); }
  std::filesystem::path resolve_wav(const ManifestEntry& e) const;

  /// Entry indices per speaker, speakers in sorted order.
  std::map<std::string, std::vector<std::size_t>> by_speaker() const;
  std::vector<std::string> speakers() const;
  std::size_t index_of(const std::string& utterance_id) const;

  /// Keeps only entries of the listed speakers (order preserved).
  Manifest filter_speakers(const std::vector<std::string>& speakers) const;
  Manifest exclude_speakers(const std::vector<std::string>& speakers) const;

  /// Throws InputError unless every speaker has at least two utterances.
  void require_reference_pairs() const;
};

/// Tab-separated `utterance_id speaker_id wav_path text`; `#` lines and
/// blank lines are skipped. Malformed lines and duplicate ids throw
/// FormatError naming `source` and the 1-based line number.
Manifest parse_manifest(std::string_view text, const std::string& source = "manifest");
Manifest read_manifest(const std::filesystem::path& path);

std::string format_manifest(const Manifest& m);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// n same-speaker references for entry `target`, uniform without
/// replacement. The target is excluded unless `include_target`. With fewer
/// than n candidates, draws with replacement and sets *with_replacement.
/// Throws SamplingError when there is no candidate at all.
std::vector<std::size_t> sample_references(const Manifest& m, std::size_t target, std::size_t n,
                                           Rng& rng, bool include_target = false,
                                           bool* with_replacement = nullptr);

}  // namespace attentron
