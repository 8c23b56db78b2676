#include "attentron/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "attentron/encoders.hpp"

namespace attentron::metrics {

double mcd_constant() { return 10.0 / std::numbers::ln10 * std::numbers::sqrt2; }

AlignmentResult dtw_align(const Mat<double>& a, const Mat<double>& b) {
  if (a.rows() == 0 || b.rows() == 0) {
    throw LengthError("dtw: empty sequence (" + std::to_string(a.rows()) + " vs " +
                      std::to_string(b.rows()) + " frames)");
  }
  if (a.cols() != b.cols()) {
    throw DimensionError("dtw: feature widths differ (" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.cols()) + ")");
  }
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.rows();
  Mat<double> local(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) local(i, j) = (a.row(i) - b.row(j)).norm();
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  Mat<double> acc = Mat<double>::Constant(n, m, inf);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i == 0 && j == 0) {
        acc(0, 0) = local(0, 0);
        continue;
      }
      double best = inf;
      if (i > 0 && j > 0) best = acc(i - 1, j - 1);
      if (i > 0) best = std::min(best, acc(i - 1, j));
      if (j > 0) best = std::min(best, acc(i, j - 1));
      acc(i, j) = local(i, j) + best;
    }
  }

  AlignmentResult r;
  r.cost = acc(n - 1, m - 1);
  Eigen::Index i = n - 1;
  Eigen::Index j = m - 1;
  r.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = acc(i - 1, j - 1);
      const double down = acc(i - 1, j);
      const double right = acc(i, j - 1);
      if (diag <= down && diag <= right) {
        --i;
        --j;
      } else if (down <= right) {
        --i;
      } else {
        --j;
      }
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

double mcd_dtw_cepstra(const Mat<double>& a, const Mat<double>& b) {
  const AlignmentResult al = dtw_align(a, b);
  double total = 0.0;
  for (auto [i, j] : al.path) {
    total += (a.row(static_cast<Eigen::Index>(i)) - b.row(static_cast<Eigen::Index>(j))).norm();
  }
  return mcd_constant() * total / static_cast<double>(al.path.size());
}

double mcd_dtw(const dsp::MelSpectrogram& a, const dsp::MelSpectrogram& b) {
  if (a.n_frames() == 0 || b.n_frames() == 0) throw LengthError("mcd: empty spectrogram");
  if (a.n_mels() != b.n_mels()) {
    throw DimensionError("mcd: mel widths differ (" + std::to_string(a.n_mels()) + " vs " +
                         std::to_string(b.n_mels()) + ")");
  }
  return mcd_dtw_cepstra(dsp::mel_cepstrum(a), dsp::mel_cepstrum(b));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine similarity: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw InputError("cosine similarity is undefined for a zero vector");
  }
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double speaker_similarity(std::span<const double> synth,
                          std::span<const std::vector<double>> targets) {
  if (targets.empty()) throw InputError("speaker similarity needs at least one target");
  std::vector<double> mean(synth.size(), 0.0);
  for (const auto& t : targets) {
    if (t.size() != synth.size()) {
      throw DimensionError("speaker similarity: embedding widths differ");
    }
    double norm = 0.0;
    for (double v : t) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw InputError("speaker similarity: zero target embedding");
    for (std::size_t i = 0; i < t.size(); ++i) mean[i] += t[i] / norm;
  }
  for (double& v : mean) v /= static_cast<double>(targets.size());
  return cosine_similarity(synth, mean);
}

double speaker_similarity(const Model<float>& embedder, const dsp::MelSpectrogram& synth,
                          std::span<const dsp::MelSpectrogram> targets) {
  auto embed = [&](const dsp::MelSpectrogram& m) {
    const Mat<float> e = coarse_embed(embedder, m.frames);
    return std::vector<double>(e.data(), e.data() + e.size());
  };
  std::vector<std::vector<double>> target_embeddings;
  for (const auto& t : targets) target_embeddings.push_back(embed(t));
  const std::vector<double> s = embed(synth);
  return speaker_similarity(s, target_embeddings);
}

bool is_collapsed(std::size_t frames, std::size_t text_length) {
  return frames > 4 * text_length;
}

std::size_t collapse_count(std::span<const EvalRecord> records) {
  std::size_t n = 0;
  for (const auto& r : records) n += is_collapsed(r.frames, r.text_length) ? 1 : 0;
  return n;
}

std::size_t collapse_count(std::span<const std::pair<std::size_t, std::size_t>> lengths) {
  std::size_t n = 0;
  for (auto [frames, text] : lengths) n += is_collapsed(frames, text) ? 1 : 0;
  return n;
}

Summary summarize(std::span<const EvalRecord> records) {
  Summary s;
  s.n = records.size();
  s.collapse_count = collapse_count(records);
  if (records.empty()) return s;
  for (const auto& r : records) {
    s.mean_mcd += r.mcd_dtw;
    s.mean_sim += r.similarity;
  }
  s.mean_mcd /= static_cast<double>(records.size());
  s.mean_sim /= static_cast<double>(records.size());
  return s;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string format_report(std::span<const EvalRecord> records) {
  std::ostringstream os;
  os << "utterance_id,L_v,L_t,mcd_dtw,similarity,collapsed\n";
  for (const auto& r : records) {
    os << r.utterance_id << ',' << r.frames << ',' << r.text_length << ',' << fmt(r.mcd_dtw)
       << ',' << fmt(r.similarity) << ',' << (r.collapsed ? 1 : 0) << '\n';
  }
  return os.str();
}

std::vector<EvalRecord> parse_report(std::string_view csv) {
  std::vector<EvalRecord> out;
  std::istringstream is{std::string(csv)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != "utterance_id,L_v,L_t,mcd_dtw,similarity,collapsed") {
        throw FormatError("report: unexpected header '" + line + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) {
      throw FormatError("report line " + std::to_string(lineno) + ": expected 6 fields");
    }
    EvalRecord r;
    r.utterance_id = f[0];
    r.frames = std::stoul(f[1]);
    r.text_length = std::stoul(f[2]);
    r.mcd_dtw = std::stod(f[3]);
    r.similarity = std::stod(f[4]);
    r.collapsed = f[5] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_summary(const Summary& s) {
  std::ostringstream os;
  os << "mean_mcd=" << fmt(s.mean_mcd) << '\n'
     << "mean_sim=" << fmt(s.mean_sim) << '\n'
     << "collapse_count=" << s.collapse_count << '\n'
     << "n=" << s.n << '\n';
  return os.str();
}

Summary parse_summary(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"mean_mcd", "mean_sim", "collapse_count", "n"}) {
    if (!kv.count(key)) throw FormatError(std::string("summary: missing key ") + key);
  }
  Summary s;
  s.mean_mcd = std::stod(kv["mean_mcd"]);
  s.mean_sim = std::stod(kv["mean_sim"]);
  s.collapse_count = std::stoul(kv["collapse_count"]);
  s.n = std::stoul(kv["n"]);
  return s;
}

}  // namespace attentron::metrics
