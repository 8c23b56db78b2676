#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "attentron/encoders.hpp"
#include "attentron/random.hpp"

using namespace attentron;

namespace {

ModelConfig small(FineMode mode = FineMode::attention, ValuePath vp = ValuePath::raw_fc) {
  ModelConfig c = ModelConfig::uniform(8);
  c.n_mels = 6;
  c.fine_mode = mode;
  c.value_path = vp;
  return c;
}

Mat<double> random_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::vector<Mat<double>> random_refs(Rng& rng, std::initializer_list<int> lengths, int n_mels) {
  std::vector<Mat<double>> out;
  for (int l : lengths) out.push_back(random_mat(rng, l, n_mels));
  return out;
}

}  // namespace

TEST_CASE("reference batch pads to the longest reference and masks the padding") {
  Rng rng(1);
  const auto refs = random_refs(rng, {2, 5, 3}, 4);
  const auto batch = make_reference_batch<double>(std::span<const Mat<double>>(refs));
  CHECK(batch.count() == 3);
  CHECK(batch.max_length() == 5);
  const Mask mask = batch.mask();
  REQUIRE(mask.size() == 15);
  CHECK(std::count(mask.begin(), mask.end(), 1) == 10);
  CHECK(mask[0] == 1);
  CHECK(mask[2] == 0);
  CHECK(mask[5 + 4] == 1);
  CHECK(batch.reference(1) == refs[1]);
  CHECK(batch.reference(0) == refs[0]);
}

TEST_CASE("reference batch rejects empty input") {
  std::vector<Mat<double>> none;
  CHECK_THROWS_AS(make_reference_batch<double>(std::span<const Mat<double>>(none)), AttentionError);
  std::vector<Mat<double>> empty_ref{Mat<double>(0, 4)};
  CHECK_THROWS_AS(make_reference_batch<double>(std::span<const Mat<double>>(empty_ref)),
                  AttentionError);
}

TEST_CASE("attention weights are a distribution over real frames") {
  const auto m = Model<double>::create(small(), 3);
  Rng rng(2);
  const auto refs = random_refs(rng, {3, 6}, 6);
  const auto batch = make_reference_batch<double>(std::span<const Mat<double>>(refs));
  const Mat<double> q = random_mat(rng, 1, m.config.d_dec);
  const auto r = attend(m, q, batch);
  const Mask mask = batch.mask();
  CHECK(std::abs(r.weights.sum() - 1.0) < 1e-12);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) CHECK(r.weights(0, static_cast<Eigen::Index>(i)) == 0.0);
  }
  CHECK(r.context.cols() == m.config.d_v);
}

TEST_CASE("attention context does not depend on reference order") {
  for (ValuePath vp : {ValuePath::raw_fc, ValuePath::encoded}) {
    const auto m = Model<double>::create(small(FineMode::attention, vp), 4);
    Rng rng(5);
    auto refs = random_refs(rng, {4, 2, 5}, 6);
    const Mat<double> q = random_mat(rng, 1, m.config.d_dec);
    const auto a = attend(m, q, make_reference_batch<double>(std::span<const Mat<double>>(refs)));
    std::swap(refs[0], refs[2]);
    const auto b = attend(m, q, make_reference_batch<double>(std::span<const Mat<double>>(refs)));
    CHECK((a.context - b.context).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("average pool ignores the query and none yields zeros") {
  Rng rng(6);
  const auto refs = random_refs(rng, {3, 4}, 6);
  const auto batch = make_reference_batch<double>(std::span<const Mat<double>>(refs));
  const auto pool = Model<double>::create(small(FineMode::average_pool), 7);
  const auto a = attend(pool, random_mat(rng, 1, pool.config.d_dec), batch);
  const auto b = attend(pool, random_mat(rng, 1, pool.config.d_dec), batch);
  CHECK(a.context == b.context);
  CHECK(a.weights.size() == 0);

  const auto none = Model<double>::create(small(FineMode::none), 7);
  const auto z = attend(none, random_mat(rng, 1, none.config.d_dec), batch);
  CHECK(z.context.isZero(0.0));
}

TEST_CASE("self attention ignores the decoder state") {
  const auto m = Model<double>::create(small(FineMode::self_attention), 8);
  Rng rng(9);
  const auto refs = random_refs(rng, {3, 4}, 6);
  const auto batch = make_reference_batch<double>(std::span<const Mat<double>>(refs));
  const auto a = attend(m, random_mat(rng, 1, m.config.d_dec), batch);
  const auto b = attend(m, random_mat(rng, 1, m.config.d_dec), batch);
  CHECK((a.context - b.context).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("coarse embedding of copies equals the single embedding") {
  const auto m = Model<double>::create(small(), 10);
  Rng rng(11);
  const Mat<double> mel = random_mat(rng, 7, 6);
  const Mat<double> single = coarse_embed(m, mel);
  CHECK(single.rows() == 1);
  CHECK(single.cols() == m.config.d_g);
  const std::vector<Mat<double>> copies(3, mel);
  const Mat<double> multi = coarse_embed_multi(m, std::span<const Mat<double>>(copies));
  CHECK((multi - single).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("coarse embedding is zero when the coarse encoder is off") {
  ModelConfig c = small();
  c.coarse = false;
  const auto m = Model<double>::create(c, 12);
  Rng rng(13);
  CHECK(coarse_embed(m, random_mat(rng, 4, 6)).isZero(0.0));
}

TEST_CASE("reference encodings have the configured widths") {
  const auto m = Model<double>::create(small(FineMode::attention, ValuePath::encoded), 14);
  Rng rng(15);
  const auto refs = random_refs(rng, {2, 3}, 6);
  const auto enc = encode_references(m, make_reference_batch<double>(std::span<const Mat<double>>(refs)));
  CHECK(enc.keys.shape() == Shape{2, 3, 8});
  CHECK(enc.values.shape() == Shape{2, 3, 8});
  CHECK(enc.intermediate.shape() == Shape{2, 3, static_cast<std::size_t>(m.config.d_r())});
  CHECK(enc.mask.size() == 6);
}
