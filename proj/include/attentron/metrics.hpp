#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attentron/dsp.hpp"
#include "attentron/model.hpp"

namespace attentron::metrics {

/// (10 / ln 10) * sqrt(2).
double mcd_constant();

struct AlignmentResult {
  double cost = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> path;
};

/// Full-grid DTW with unit steps {(1,0), (0,1), (1,1)} and Euclidean local
/// cost. On equal accumulated cost the backtrace prefers the diagonal, then
/// the (1,0) step, then (0,1).
AlignmentResult dtw_align(const Mat<double>& a, const Mat<double>& b);

/// Mel-cepstral distortion after DTW alignment of coefficients 1..13:
/// mcd_constant() * mean Euclidean distance over the aligned pairs.
double mcd_dtw(const dsp::MelSpectrogram& a, const dsp::MelSpectrogram& b);
double mcd_dtw_cepstra(const Mat<double>& a, const Mat<double>& b);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Cosine similarity between the synthesized embedding and the mean of the
/// L2-normalised target embeddings.
double speaker_similarity(std::span<const double> synth,
                          std::span<const std::vector<double>> targets);

/// Same, with the model's coarse encoder as the embedder.
double speaker_similarity(const Model<float>& embedder, const dsp::MelSpectrogram& synth,
                          std::span<const dsp::MelSpectrogram> targets);

/// True when the output length exceeds 4x the text length.
bool is_collapsed(std::size_t frames, std::size_t text_length);

struct EvalRecord {
  std::string utterance_id;
  std::size_t frames = 0;       // L_v
  std::size_t text_length = 0;  // L_t
  double mcd_dtw = 0.0;
  double similarity = 0.0;
  bool collapsed = false;
};

std::size_t collapse_count(std::span<const EvalRecord> records);
std::size_t collapse_count(std::span<const std::pair<std::size_t, std::size_t>> lengths);

struct Summary {
  double mean_mcd = 0.0;
  double mean_sim = 0.0;
  std::size_t collapse_count = 0;
  std::size_t n = 0;
};

Summary summarize(std::span<const EvalRecord> records);

/// CSV with header `utterance_id,L_v,L_t,mcd_dtw,similarity,collapsed`.
std::string format_report(std::span<const EvalRecord> records);
std::vector<EvalRecord> parse_report(std::string_view csv);

/// `key=value` lines: mean_mcd, mean_sim, collapse_count, n.
std::string format_summary(const Summary& s);
Summary parse_summary(std::string_view text);

}  // namespace attentron::metrics
