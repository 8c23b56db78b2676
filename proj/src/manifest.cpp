#include "attentron/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "attentron/errors.hpp"

namespace attentron {

std::filesystem::path Manifest::resolve_wav(const ManifestEntry& e) const {
  const std::filesystem::path p(e.wav_path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::map<std::string, std::vector<std::size_t>> Manifest::by_speaker() const {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < entries.size(); ++i) out[entries[i].speaker_id].push_back(i);
  return out;
}

std::vector<std::string> Manifest::speakers() const {
  std::vector<std::string> out;
  for (const auto& [spk, idx] : by_speaker()) out.push_back(spk);
  return out;
}

std::size_t Manifest::index_of(const std::string& utterance_id) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].utterance_id == utterance_id) return i;
  }
  throw InputError("manifest has no utterance '" + utterance_id + "'");
}

Manifest Manifest::filter_speakers(const std::vector<std::string>& speakers) const {
  const std::set<std::string> keep(speakers.begin(), speakers.end());
  Manifest out{{}, base_dir};
  for (const auto& e : entries) {
    if (keep.count(e.speaker_id)) out.entries.push_back(e);
  }
  return out;
}

Manifest Manifest::exclude_speakers(const std::vector<std::string>& speakers) const {
  const std::set<std::string> drop(speakers.begin(), speakers.end());
  Manifest out{{}, base_dir};
  for (const auto& e : entries) {
    if (!drop.count(e.speaker_id)) out.entries.push_back(e);
  }
  return out;
}

void Manifest::require_reference_pairs() const {
  for (const auto& [spk, idx] : by_speaker()) {
    if (idx.size() < 2) {
      throw InputError("speaker '" + spk + "' has a single utterance; at least two are needed");
    }
  }
}

Manifest parse_manifest(std::string_view text, const std::string& source) {
  Manifest m;
  std::unordered_set<std::string> seen;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fail = [&](const std::string& why) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": " + why);
    };
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (int k = 0; k < 3; ++k) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fail("expected 4 tab-separated fields, found " + std::to_string(k + 1));
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    fields.push_back(line.substr(start));
    if (fields[3].find('\t') != std::string::npos) fail("too many fields");
    static const char* names[] = {"utterance_id", "speaker_id", "wav_path", "text"};
    for (int k = 0; k < 4; ++k) {
      if (fields[k].empty()) fail(std::string("empty ") + names[k]);
    }
    if (!seen.insert(fields[0]).second) fail("duplicate utterance_id '" + fields[0] + "'");
    m.entries.push_back({fields[0], fields[1], fields[2], fields[3]});
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Manifest m = parse_manifest(ss.str(), path.string());
  m.base_dir = path.parent_path();
  return m;
}

std::string format_manifest(const Manifest& m) {
  std::ostringstream os;
  os << "# utterance_id\tspeaker_id\twav_path\ttext\n";
  for (const auto& e : m.entries) {
    os << e.utterance_id << '\t' << e.speaker_id << '\t' << e.wav_path << '\t' << e.text << '\n';
  }
  return os.str();
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << format_manifest(m);
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::size_t> sample_references(const Manifest& m, std::size_t target, std::size_t n,
                                           Rng& rng, bool include_target,
                                           bool* with_replacement) {
  if (target >= m.entries.size()) throw InputError("reference sampling: target out of range");
  if (n == 0) throw SamplingError("reference sampling: n must be at least 1");
  const std::string& spk = m.entries[target].speaker_id;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].speaker_id == spk && (include_target || i != target)) pool.push_back(i);
  }
  if (pool.empty()) {
    throw SamplingError("speaker '" + spk + "' has no utterance other than '" +
                        m.entries[target].utterance_id + "'");
  }
  if (with_replacement) *with_replacement = pool.size() < n;
  std::vector<std::size_t> out;
  if (pool.size() < n) {
    for (std::size_t k = 0; k < n; ++k) out.push_back(pool[rng.below(pool.size())]);
    return out;
  }
  // Partial Fisher-Yates.
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = k + rng.below(pool.size() - k);
    std::swap(pool[k], pool[j]);
    out.push_back(pool[k]);
  }
  return out;
}

}  // namespace attentron
