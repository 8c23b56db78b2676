#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "attentron/checkpoint.hpp"
#include "attentron/config.hpp"
#include "attentron/manifest.hpp"
#include "attentron/toy_corpus.hpp"

using namespace attentron;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("attentron_test_formats_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string error_of(auto fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

ModelConfig small() {
  ModelConfig c = ModelConfig::uniform(8);
  c.n_mels = 6;
  return c;
}

}  // namespace

TEST_CASE("manifest parses tabs, comments and blank lines") {
  const auto m = parse_manifest("# header\nu1\ts1\ta.wav\thello\r\n\nu2\ts1\tb.wav\tworld, too\n");
  REQUIRE(m.size() == 2);
  CHECK(m.entries[0].text == "hello");
  CHECK(m.entries[1].text == "world, too");
  CHECK(m.index_of("u2") == 1);
  CHECK(m.speakers() == std::vector<std::string>{"s1"});
}

TEST_CASE("manifest errors carry the line number") {
  CHECK(error_of([] { parse_manifest("u1\ts1\ta.wav\thi\nu2\ts1\tb.wav\n", "m.tsv"); })
            .find("m.tsv:2") != std::string::npos);
  CHECK(error_of([] { parse_manifest("# c\n\nu1\ts1\t\thi\n", "m.tsv"); }).find("m.tsv:3") !=
        std::string::npos);
  CHECK(error_of([] { parse_manifest("u1\ts1\ta\thi\nu1\ts2\tb\tyo\n", "m.tsv"); })
            .find("m.tsv:2") != std::string::npos);
  CHECK_THROWS_AS(parse_manifest("a\tb\tc\td\te\n"), FormatError);
}

TEST_CASE("manifest format round-trips and resolves relative paths") {
  const fs::path dir = scratch("manifest");
  Manifest m = parse_manifest("u1\ts1\twavs/a.wav\thi\nu2\ts2\t/abs/b.wav\tthere\n");
  write_manifest(dir / "m.tsv", m);
  const Manifest back = read_manifest(dir / "m.tsv");
  CHECK(back.size() == 2);
  CHECK(back.resolve_wav(back.entries[0]) == dir / "wavs/a.wav");
  CHECK(back.resolve_wav(back.entries[1]) == fs::path("/abs/b.wav"));
  CHECK(format_manifest(back) == format_manifest(m));
}

TEST_CASE("speaker filters keep order") {
  const auto m = parse_manifest("a\tx\t1\tt\nb\ty\t2\tt\nc\tx\t3\tt\n");
  const auto only_x = m.filter_speakers({"x"});
  REQUIRE(only_x.size() == 2);
  CHECK(only_x.entries[1].utterance_id == "c");
  CHECK(m.exclude_speakers({"x"}).size() == 1);
  CHECK_THROWS_AS(m.require_reference_pairs(), InputError);
}

TEST_CASE("reference sampling excludes the target and stays within the speaker") {
  const auto m = parse_manifest("a\tx\t1\tt\nb\tx\t2\tt\nc\tx\t3\tt\nd\ty\t4\tt\ne\tx\t5\tt\n");
  Rng rng(1);
  bool repl = true;
  const auto refs = sample_references(m, 0, 3, rng, false, &repl);
  CHECK_FALSE(repl);
  CHECK(std::set<std::size_t>(refs.begin(), refs.end()).size() == 3);
  for (auto r : refs) {
    CHECK(r != 0);
    CHECK(m.entries[r].speaker_id == "x");
  }
  const auto many = sample_references(m, 0, 6, rng, false, &repl);
  CHECK(repl);
  CHECK(many.size() == 6);
  CHECK_THROWS_AS(sample_references(m, 3, 1, rng), SamplingError);
  CHECK(sample_references(m, 3, 1, rng, true) == std::vector<std::size_t>{3});
}

TEST_CASE("checkpoint bytes round-trip bitwise") {
  const auto model = Model<float>::create(small(), 3);
  auto opt = AdamState<float>::zeros_like(model.params);
  opt.first_moment[0].setConstant(0.25f);
  opt.step_count = 12;
  const auto bytes = encode_checkpoint(model.params, &opt, {12, 2});
  const RawCheckpoint raw = decode_checkpoint(bytes);
  CHECK(raw.meta.step == 12);
  CHECK(raw.meta.phase == 2);
  const LoadedCheckpoint back = restore_checkpoint(raw, small());
  CHECK(back.has_optimizer);
  CHECK(back.optimizer.step_count == 12);
  CHECK(encode_checkpoint(back.model.params, &back.optimizer, back.meta) == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad.resize(bytes.size() - 3);
  CHECK_THROWS(decode_checkpoint(bad));
}

TEST_CASE("checkpoint files carry their model config") {
  const fs::path dir = scratch("ckpt");
  const auto model = Model<float>::create(small(), 4);
  save_checkpoint(dir / "a.ckpt", model, nullptr, {5, 1});
  CHECK(fs::exists(config_sidecar(dir / "a.ckpt")));
  const LoadedCheckpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back.model.config == model.config);
  CHECK_FALSE(back.has_optimizer);
  for (std::size_t i = 0; i < model.params.size(); ++i) CHECK(back.model.params[i].value == model.params[i].value);
}

TEST_CASE("restoring into a different architecture names the offending tensors") {
  const auto model = Model<float>::create(small(), 4);
  const RawCheckpoint raw = decode_checkpoint(encode_checkpoint(model.params, nullptr, {}));
  ModelConfig wider = small();
  wider.d_m = 10;
  const std::string msg = error_of([&] { restore_checkpoint(raw, wider); });
  CHECK(msg.find("shape") != std::string::npos);
  CHECK_THROWS_AS(restore_checkpoint(raw, wider), IncompatibilityError);
}

TEST_CASE("select_parameters drops the coarse encoder for ablation") {
  const auto model = Model<float>::create(small(), 4);
  ModelConfig off = small();
  off.coarse = false;
  const auto ablated = select_parameters(model, off);
  CHECK(ablated.params.size() < model.params.size());
  for (const auto& p : ablated.params) CHECK(p.value == model.params.at(p.name).value);
  ModelConfig encoded = small();
  encoded.value_path = ValuePath::encoded;
  CHECK_THROWS_AS(select_parameters(model, encoded), IncompatibilityError);
}

TEST_CASE("learning-rate schedule steps down once") {
  const TrainConfig cfg = TrainConfig::full();
  CHECK(lr_schedule(0, 1, cfg) == 1e-3);
  CHECK(lr_schedule(19999, 1, cfg) == 1e-3);
  CHECK(lr_schedule(20000, 1, cfg) == 1e-4);
  CHECK(lr_schedule(0, 2, cfg) == 1e-4);
  CHECK(lr_schedule(49999, 2, cfg) == 1e-4);
  CHECK(lr_schedule(50000, 2, cfg) == 1e-5);
}

TEST_CASE("train config parsing") {
  const TrainConfig c = parse_train_config(
      "# toy run\nprofile = toy\nbatch_size = 2\nphase2_steps = 10\nphase2_decay_step = 5\n"
      "held_out_speakers = a, b\nmanifest_phase2 = data/m.tsv\nfine_mode = average_pool\n",
      "/base");
  CHECK(c.batch_size == 2);
  CHECK(c.phase2.steps == 10);
  CHECK(c.model.d_m == 64);
  CHECK(c.model.fine_mode == FineMode::average_pool);
  CHECK(c.held_out_speakers == std::vector<std::string>{"a", "b"});
  CHECK(c.manifest_phase2 == fs::path("/base/data/m.tsv"));
  CHECK(error_of([] { parse_train_config("batch_size = 2\nbogus = 1\n", {}, "t.cfg"); }).find("t.cfg:2") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_train_config("batch_size = zero\n"), ConfigError);
  CHECK_THROWS_AS(parse_train_config("batch_size = 0\n"), ConfigError);
  const TrainConfig again = parse_train_config(format_train_config(c), "/base");
  CHECK(format_train_config(again) == format_train_config(c));
}

TEST_CASE("toy corpus is deterministic and speakers differ") {
  const auto a = toy_speaker(7, 0), b = toy_speaker(7, 0), c = toy_speaker(7, 1);
  CHECK(a.f0_base == b.f0_base);
  CHECK(a.f0_base != c.f0_base);
  const fs::path d1 = scratch("toy1"), d2 = scratch("toy2");
  ToyCorpusOptions o;
  o.n_speakers = 2;
  o.utts_per_speaker = 2;
  const Manifest m1 = generate_toy_corpus(o, d1);
  generate_toy_corpus(o, d2);
  CHECK(m1.size() == 4);
  for (const auto& e : m1.entries) {
    std::ifstream f1(m1.resolve_wav(e), std::ios::binary), f2(d2 / "wavs" / (e.utterance_id + ".wav"), std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(!s1.empty());
    CHECK(s1 == s2);
  }
}
