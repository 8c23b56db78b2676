#include <doctest.h>

#include <cmath>
#include <limits>

#include "attentron/metrics.hpp"
#include "attentron/random.hpp"

using namespace attentron;
using namespace attentron::metrics;

namespace {

Mat<double> random_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Minimum over every monotone path from (0,0) to (n-1,m-1), by recursion.
double brute_force(const Mat<double>& a, const Mat<double>& b, Eigen::Index i, Eigen::Index j) {
  const double here = (a.row(i) - b.row(j)).norm();
  if (i == a.rows() - 1 && j == b.rows() - 1) return here;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < a.rows()) best = std::min(best, brute_force(a, b, i + 1, j));
  if (j + 1 < b.rows()) best = std::min(best, brute_force(a, b, i, j + 1));
  if (i + 1 < a.rows() && j + 1 < b.rows()) best = std::min(best, brute_force(a, b, i + 1, j + 1));
  return here + best;
}

dsp::MelSpectrogram random_mel(Rng& rng, int frames) {
  dsp::MelSpectrogram m;
  m.frames = random_mat(rng, frames, dsp::kNumMels).cast<float>();
  return m;
}

}  // namespace

TEST_CASE("dtw cost equals brute-force path enumeration") {
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(5));
    const auto m = static_cast<Eigen::Index>(1 + rng.below(5));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(3));
    const Mat<double> a = random_mat(rng, n, d), b = random_mat(rng, m, d);
    const AlignmentResult r = dtw_align(a, b);
    CHECK(r.cost == doctest::Approx(brute_force(a, b, 0, 0)).epsilon(1e-12));
    // Path is monotone, connected, and its cost is the reported cost.
    REQUIRE(r.path.front() == std::pair<std::size_t, std::size_t>{0, 0});
    REQUIRE(r.path.back() == std::pair<std::size_t, std::size_t>(n - 1, m - 1));
    double along = 0.0;
    for (std::size_t p = 0; p < r.path.size(); ++p) {
      const auto [i, j] = r.path[p];
      along += (a.row(static_cast<Eigen::Index>(i)) - b.row(static_cast<Eigen::Index>(j))).norm();
      if (p > 0) {
        const auto [pi, pj] = r.path[p - 1];
        CHECK(i - pi <= 1);
        CHECK(j - pj <= 1);
        CHECK(i + j > pi + pj);
      }
    }
    CHECK(along == doctest::Approx(r.cost).epsilon(1e-12));
  }
}

TEST_CASE("dtw prefers the diagonal on ties") {
  const Mat<double> zeros = Mat<double>::Zero(3, 2);
  const AlignmentResult r = dtw_align(zeros, zeros);
  CHECK(r.cost == 0.0);
  CHECK(r.path.size() == 3);
  for (std::size_t p = 0; p < 3; ++p) CHECK(r.path[p] == std::pair<std::size_t, std::size_t>{p, p});
}

TEST_CASE("dtw rejects empty and mismatched input") {
  CHECK_THROWS_AS(dtw_align(Mat<double>(0, 2), Mat<double>::Zero(2, 2)), LengthError);
  CHECK_THROWS_AS(dtw_align(Mat<double>::Zero(2, 3), Mat<double>::Zero(2, 2)), DimensionError);
}

TEST_CASE("mcd of a spectrogram with itself is exactly zero") {
  Rng rng(2);
  const auto a = random_mel(rng, 9);
  CHECK(mcd_dtw(a, a) == 0.0);
}

TEST_CASE("mcd ignores frame duplication") {
  Rng rng(3);
  const auto a = random_mel(rng, 6);
  dsp::MelSpectrogram slow;
  slow.frames.resize(12, a.n_mels());
  for (Eigen::Index i = 0; i < 6; ++i) {
    slow.frames.row(2 * i) = a.frames.row(i);
    slow.frames.row(2 * i + 1) = a.frames.row(i);
  }
  CHECK(mcd_dtw(a, slow) == 0.0);
  CHECK(mcd_dtw(slow, a) == 0.0);
}

TEST_CASE("mcd scales distance by the conventional constant") {
  CHECK(mcd_constant() == doctest::Approx(10.0 / std::log(10.0) * std::sqrt(2.0)));
  Mat<double> a = Mat<double>::Zero(1, 13), b = Mat<double>::Zero(1, 13);
  b(0, 0) = 2.0;
  CHECK(mcd_dtw_cepstra(a, b) == doctest::Approx(2.0 * mcd_constant()));
}

TEST_CASE("cosine similarity fixed points") {
  const std::vector<double> a{1.0, 2.0, -3.0};
  const std::vector<double> neg{-1.0, -2.0, 3.0};
  const std::vector<double> e1{1.0, 0.0}, e2{0.0, 5.0};
  CHECK(cosine_similarity(a, a) == 1.0);
  CHECK(cosine_similarity(a, neg) == -1.0);
  CHECK(cosine_similarity(e1, e2) == 0.0);
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(cosine_similarity(e1, zero), InputError);
  CHECK_THROWS_AS(cosine_similarity(a, e1), DimensionError);
}

TEST_CASE("speaker similarity averages normalised targets") {
  const std::vector<double> synth{1.0, 1.0};
  const std::vector<std::vector<double>> targets{{10.0, 0.0}, {0.0, 0.1}};
  CHECK(speaker_similarity(synth, targets) == doctest::Approx(1.0));
  std::vector<std::vector<double>> none;
  CHECK_THROWS_AS(speaker_similarity(synth, none), InputError);
}

TEST_CASE("collapse threshold is strict") {
  CHECK_FALSE(is_collapsed(40, 10));
  CHECK(is_collapsed(41, 10));
  const std::vector<std::pair<std::size_t, std::size_t>> lens{{40, 10}, {41, 10}, {100, 5}};
  CHECK(collapse_count(std::span<const std::pair<std::size_t, std::size_t>>(lens)) == 2);
}

TEST_CASE("report and summary round-trip") {
  std::vector<EvalRecord> recs{{"u1", 30, 10, 12.5, 0.75, false}, {"u2", 50, 10, 20.25, 0.5, true}};
  const auto back = parse_report(format_report(recs));
  REQUIRE(back.size() == 2);
  CHECK(back[1].utterance_id == "u2");
  CHECK(back[1].frames == 50);
  CHECK(back[1].mcd_dtw == 20.25);
  CHECK(back[1].collapsed);
  const Summary s = summarize(recs);
  CHECK(s.n == 2);
  CHECK(s.collapse_count == 1);
  CHECK(s.mean_mcd == doctest::Approx(16.375));
  const Summary t = parse_summary(format_summary(s));
  CHECK(t.mean_mcd == s.mean_mcd);
  CHECK(t.mean_sim == s.mean_sim);
  CHECK(t.n == 2);
  CHECK_THROWS_AS(parse_report("bad,header\n"), FormatError);
  CHECK_THROWS_AS(parse_summary("mean_mcd=1\n"), FormatError);
}
