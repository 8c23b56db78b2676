#include <doctest.h>

#include <cmath>

#include "attentron/synthesizer.hpp"
#include "attentron/random.hpp"

using namespace attentron;

namespace {

ModelConfig small() {
  ModelConfig c = ModelConfig::uniform(8);
  c.n_mels = 6;
  return c;
}

Mat<double> random_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("text_to_ids lowercases and rejects unknown characters") {
  const auto ids = text_to_ids("  Ab, c ");
  CHECK(ids.size() == 5);
  CHECK(ids == text_to_ids("ab, c"));
  CHECK_THROWS_AS(text_to_ids(""), InputError);
  CHECK_THROWS_AS(text_to_ids("   "), InputError);
  CHECK_THROWS_AS(text_to_ids("a#b"), InputError);
  for (int id : text_to_ids(std::string(alphabet()))) {
    CHECK(id >= 0);
    CHECK(id < alphabet_size());
  }
}

TEST_CASE("model config survives a to_map/apply round trip") {
  ModelConfig c = ModelConfig::uniform(16);
  c.fine_mode = FineMode::self_attention;
  c.value_path = ValuePath::encoded;
  c.coarse = false;
  ModelConfig d;
  for (const auto& [k, v] : c.to_map()) CHECK(d.apply(k, v));
  CHECK(d == c);
  CHECK_FALSE(d.apply("no_such_key", "1"));
  CHECK_THROWS_AS(d.apply("fine_mode", "sideways"), ConfigError);
  ModelConfig even = small();
  even.kernel_size = 4;
  CHECK_THROWS_AS(even.validate(), ConfigError);
}

TEST_CASE("model creation is deterministic per seed") {
  const auto a = Model<float>::create(small(), 1);
  const auto b = Model<float>::create(small(), 1);
  const auto c = Model<float>::create(small(), 2);
  REQUIRE(a.params.size() == b.params.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params[i].value == b.params[i].value);
    differs = differs || a.params[i].value != c.params[i].value;
  }
  CHECK(differs);
}

TEST_CASE("disabling the coarse encoder removes its parameters") {
  ModelConfig off = small();
  off.coarse = false;
  CHECK(Model<float>::create(off, 1).params.numel() < Model<float>::create(small(), 1).params.numel());
}

TEST_CASE("stop targets mark only the final frame") {
  const Mat<double> s = stop_targets<double>(4);
  CHECK(s.rows() == 4);
  CHECK(s(3, 0) == 1.0);
  CHECK(s.topRows(3).isZero(0.0));
}

TEST_CASE("value-level loss matches the tape loss") {
  Rng rng(3);
  Tape<double> t;
  const Mat<double> pred = random_mat(rng, 4, 6);
  const Mat<double> target = random_mat(rng, 4, 6);
  const Mat<double> logits = random_mat(rng, 4, 1);
  const Var loss = reconstruction_loss(t, t.constant(pred), t.constant(logits), target);
  std::vector<double> probs;
  for (int i = 0; i < 4; ++i) probs.push_back(1.0 / (1.0 + std::exp(-logits(i, 0))));
  CHECK(compute_loss(pred, target, probs) == doctest::Approx(t.value(loss)(0, 0)).epsilon(1e-9));
}

TEST_CASE("teacher-forced forward has target shape and is deterministic") {
  const auto m = Model<double>::create(small(), 5);
  Rng rng(6);
  const Mat<double> target = random_mat(rng, 5, 6);
  const std::vector<Mat<double>> refs{random_mat(rng, 4, 6), random_mat(rng, 3, 6)};
  const auto a = forward_teacher_forced(m, "abc", target, std::span<const Mat<double>>(refs));
  const auto b = forward_teacher_forced(m, "abc", target, std::span<const Mat<double>>(refs));
  CHECK(a.mel.rows() == 5);
  CHECK(a.mel.cols() == 6);
  CHECK(a.stop_probs.size() == 5);
  CHECK(a.mel == b.mel);
}

TEST_CASE("example_loss accumulates gradients and dropout depends on the seed") {
  const auto m = Model<double>::create(small(), 7);
  Rng rng(8);
  Example<double> ex{text_to_ids("ab"), random_mat(rng, 4, 6), {random_mat(rng, 3, 6)}};
  auto g = m.params.zero_gradients();
  const double l1 = example_loss(m, ex, ForwardOptions{}, &g);
  double norm = 0.0;
  for (const auto& x : g) norm += x.squaredNorm();
  CHECK(std::isfinite(l1));
  CHECK(norm > 0.0);
  auto g2 = g;
  example_loss(m, ex, ForwardOptions{}, &g2);
  CHECK((g2[0] - 2.0 * g[0]).cwiseAbs().maxCoeff() < 1e-12);

  const double d1 = example_loss(m, ex, ForwardOptions{true, 1}, static_cast<Gradients<double>*>(nullptr));
  const double d1b = example_loss(m, ex, ForwardOptions{true, 1}, static_cast<Gradients<double>*>(nullptr));
  const double d2 = example_loss(m, ex, ForwardOptions{true, 2}, static_cast<Gradients<double>*>(nullptr));
  CHECK(d1 == d1b);
  CHECK(d1 != d2);
}

TEST_CASE("synthesis respects the frame cap and reports attention shapes") {
  const auto m = Model<float>::create(small(), 9);
  Rng rng(10);
  dsp::MelSpectrogram ref;
  ref.frames = random_mat(rng, 5, 6).cast<float>();
  const std::vector<dsp::MelSpectrogram> refs{ref, ref};
  const auto r = synthesize(m, "abcd", std::span<const dsp::MelSpectrogram>(refs), 7);
  CHECK(r.mel.n_frames() >= 1);
  CHECK(r.mel.n_frames() <= 7);
  CHECK(r.text_length == 4);
  CHECK(r.text_attention.rows() == r.mel.n_frames());
  CHECK(r.text_attention.cols() == 4);
  CHECK(r.ref_attention.cols() == 10);
  if (r.terminated_by == Termination::frame_cap) CHECK(r.mel.n_frames() == 7);
  for (Eigen::Index i = 0; i < r.text_attention.rows(); ++i) {
    CHECK(std::abs(r.text_attention.row(i).sum() - 1.0) < 1e-5);
  }
  CHECK(default_max_frames(12) == 120);
  const auto again = synthesize(m, "abcd", std::span<const dsp::MelSpectrogram>(refs), 7);
  CHECK(again.mel.frames == r.mel.frames);
}

TEST_CASE("synthesis without references fails") {
  const auto m = Model<float>::create(small(), 9);
  std::vector<dsp::MelSpectrogram> none;
  CHECK_THROWS_AS(synthesize(m, "ab", std::span<const dsp::MelSpectrogram>(none)), AttentionError);
}
