#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "attentron/checkpoint.hpp"
#include "attentron/config.hpp"
#include "attentron/errors.hpp"
#include "attentron/evaluation.hpp"
#include "attentron/toy_corpus.hpp"
#include "attentron/trainer.hpp"
#include "attentron/verify.hpp"

namespace fs = std::filesystem;
using namespace attentron;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Ablation {
  std::string fine_mode;
  std::string value_path;
  std::string coarse;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--fine-mode", fine_mode, "attention | average_pool | self_attention | none")
        ->check(CLI::IsMember({"attention", "average_pool", "self_attention", "none"}));
    cmd->add_option("--value-path", value_path, "raw_fc | encoded")
        ->check(CLI::IsMember({"raw_fc", "encoded"}));
    cmd->add_option("--coarse", coarse, "on | off")->check(CLI::IsMember({"on", "off"}));
  }
  void apply(ModelConfig& c) const {
    if (!fine_mode.empty()) c.apply("fine_mode", fine_mode);
    if (!value_path.empty()) c.apply("value_path", value_path);
    if (!coarse.empty()) c.apply("coarse", coarse);
  }
};

void header(const std::string& command, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cout << "# attentron " << command << "\n";
  for (const auto& [k, v] : kv) std::cout << "# " << k << " = " << v << "\n";
  std::cout.flush();
}

void header_block(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) std::cout << "# " << line << "\n";
  std::cout.flush();
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Trained model, optionally reshaped by inference-time ablation flags.
Model<float> load_model(const fs::path& ckpt, const Ablation& ablation) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt);
  ModelConfig cfg = loaded.model.config;
  ablation.apply(cfg);
  if (cfg == loaded.model.config) return std::move(loaded.model);
  return select_parameters(loaded.model, cfg);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// --- subcommands -------------------------------------------------------------

struct GenToyArgs {
  ToyCorpusOptions opts;
  std::string out;
};

int run_gen_toy(const GenToyArgs& a) {
  header("gen-toy", {{"speakers", std::to_string(a.opts.n_speakers)},
                     {"utts", std::to_string(a.opts.utts_per_speaker)},
                     {"seed", std::to_string(a.opts.seed)},
                     {"min_text", std::to_string(a.opts.min_text)},
                     {"max_text", std::to_string(a.opts.max_text)},
                     {"out", a.out}});
  const Manifest m = generate_toy_corpus(a.opts, a.out);
  std::cout << "wrote " << m.size() << " utterances to " << (fs::path(a.out) / "manifest.tsv").string()
            << "\n";
  return 0;
}

struct FeaturizeArgs {
  std::string manifest;
  std::string cache;
};

int run_featurize(const FeaturizeArgs& a) {
  header("featurize", {{"manifest", a.manifest}, {"cache", a.cache}});
  const Manifest m = read_manifest(a.manifest);
  const FeaturizeReport r = featurize_manifest(m, a.cache);
  for (const auto& e : r.errors) std::cerr << "error: " << e << "\n";
  std::cout << "featurized " << r.written << ", up to date " << r.skipped << ", failed "
            << r.errors.size() << "\n";
  return r.errors.empty() ? 0 : kExitRuntime;
}

struct TrainArgs {
  std::string config;
  std::string phase = "both";
  std::string resume;
  std::vector<std::string> overrides;
  int max_steps = -1;
  Ablation ablation;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = load_train_config(a.config);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    if (!apply_train_key(cfg, key, kv.substr(eq + 1), fs::path(a.config).parent_path())) {
      throw ConfigError("--set: unknown key '" + key + "'");
    }
  }
  a.ablation.apply(cfg.model);
  cfg.validate();

  header("train", {{"config", a.config}, {"phase", a.phase},
                   {"resume", a.resume.empty() ? "none" : a.resume}});
  header_block(format_train_config(cfg));

  TrainOptions opts;
  opts.phases = a.phase == "1" ? PhaseSelection::phase1
                : a.phase == "2" ? PhaseSelection::phase2
                                 : PhaseSelection::both;
  if (!a.resume.empty()) opts.resume = fs::path(a.resume);
  opts.max_steps = a.max_steps;
  opts.log = &std::cout;
  const TrainResult r = train(cfg, opts);
  std::cout << "last checkpoint: " << r.last_checkpoint.string() << " (phase " << int(r.meta.phase)
            << ", step " << r.meta.step << ")\n";
  return 0;
}

struct SynthArgs {
  std::string ckpt;
  std::string text;
  std::string refs;
  std::string out;
  std::string wav;
  std::size_t max_frames = 0;
  int griffin_lim_iters = 32;
  Ablation ablation;
};

int run_synthesize(const SynthArgs& a) {
  const auto ref_paths = split_commas(a.refs);
  if (ref_paths.empty()) throw ConfigError("--refs needs at least one WAV file");
  header("synthesize", {{"ckpt", a.ckpt}, {"text", a.text}, {"refs", a.refs}, {"out", a.out},
                        {"wav", a.wav.empty() ? "none" : a.wav},
                        {"max_frames", std::to_string(a.max_frames)}});
  std::vector<dsp::MelSpectrogram> refs;
  for (const auto& p : ref_paths) {
    if (!fs::exists(p)) throw IoError("reference file not found: " + p);
    dsp::MelSpectrogram mel = dsp::featurize(dsp::load_wav(p));
    if (mel.n_frames() == 0) throw InputError("reference " + p + " has no frames after trimming");
    refs.push_back(std::move(mel));
  }
  const Model<float> model = load_model(a.ckpt, a.ablation);
  const SynthesisResult r = synthesize(model, a.text, refs, a.max_frames);
  dsp::write_mels(a.out, r.mel);
  if (!a.wav.empty()) dsp::save_wav(a.wav, dsp::griffin_lim(r.mel, a.griffin_lim_iters).waveform);
  std::cout << "terminated_by=" << to_string(r.terminated_by) << "\n"
            << "L_v=" << r.mel.n_frames() << "\n"
            << "L_t=" << r.text_length << "\n"
            << "n_refs=" << refs.size() << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string manifest;
  std::size_t refs_per_utt = 8;
  std::string report;
  std::string speakers;
  std::string label;
  std::string cache;
  std::string save_mels;
  std::string embedder;
  std::uint64_t seed = 1;
  std::size_t max_frames = 0;
  Ablation ablation;
};

int run_evaluate(const EvalArgs& a) {
  const std::string label = a.label.empty() ? "refs" + std::to_string(a.refs_per_utt) : a.label;
  EvalOptions opts;
  opts.refs_per_utt = a.refs_per_utt;
  opts.seed = a.seed;
  opts.max_frames = a.max_frames;
  opts.cache_dir = a.cache;
  opts.save_mels_dir = a.save_mels;
  opts.threads = threads_from_env();
  header("evaluate", {{"ckpt", a.ckpt}, {"manifest", a.manifest},
                      {"refs_per_utt", std::to_string(a.refs_per_utt)}, {"report", a.report},
                      {"label", label}, {"speakers", a.speakers.empty() ? "all" : a.speakers},
                      {"seed", std::to_string(a.seed)}, {"threads", std::to_string(opts.threads)},
                      {"max_frames", std::to_string(a.max_frames)}});

  Manifest m = read_manifest(a.manifest);
  if (!a.speakers.empty()) {
    const auto wanted = split_commas(a.speakers);
    const auto known = m.speakers();
    for (const auto& s : wanted) {
      if (std::find(known.begin(), known.end(), s) == known.end()) {
        throw ConfigError("--speakers: '" + s + "' is not in " + a.manifest);
      }
    }
    m = m.filter_speakers(wanted);
  }
  const Model<float> model = load_model(a.ckpt, a.ablation);
  std::optional<Model<float>> embedder;
  if (!a.embedder.empty()) {
    embedder = load_checkpoint(a.embedder).model;
  } else if (model.config.coarse) {
    embedder = model;
  }
  if (!embedder) std::cout << "note: no coarse encoder available; similarity is reported as nan\n";

  const auto records = evaluate_manifest(model, embedder ? &*embedder : nullptr, m, opts);
  std::error_code ec;
  fs::create_directories(a.report, ec);
  if (ec) throw IoError("cannot create report directory " + a.report + ": " + ec.message());
  const metrics::Summary s = metrics::summarize(records);
  write_text(fs::path(a.report) / (label + ".csv"), metrics::format_report(records));
  write_text(fs::path(a.report) / (label + "_summary.txt"), metrics::format_summary(s));
  std::cout << metrics::format_summary(s);
  return 0;
}

struct VerifyArgs {
  std::string suite = "all";
  verify::VerifyOptions opts;
};

int run_verify(const VerifyArgs& a) {
  header("verify", {{"suite", a.suite}, {"seed", std::to_string(a.opts.seed)},
                    {"instances", std::to_string(a.opts.instances)},
                    {"inject_fault", a.opts.inject_fault.empty() ? "none" : a.opts.inject_fault}});
  if (!a.opts.inject_fault.empty()) {
    const auto names = verify::gradient_check_names();
    if (std::find(names.begin(), names.end(), a.opts.inject_fault) == names.end()) {
      throw ConfigError("--inject-fault: unknown gradient check '" + a.opts.inject_fault + "'");
    }
  }
  std::vector<verify::CheckOutcome> all;
  auto run = [&](const std::string& name, auto fn) {
    if (a.suite != "all" && a.suite != name) return;
    for (auto& o : fn(a.opts)) {
      char line[256];
      std::snprintf(line, sizeof line, "%s %-12s %-32s n=%-4zu max_error=%.3e tol=%.1e", o.passed ? "PASS" : "FAIL",
                    o.suite.c_str(), o.name.c_str(), o.instances, o.max_error, o.tolerance);
      std::cout << line;
      if (!o.passed) std::cout << "  [" << o.detail << "]";
      std::cout << "\n";
      std::cout.flush();
      all.push_back(std::move(o));
    }
  };
  run("grads", verify::gradient_suite);
  run("dtw", verify::dtw_suite);
  run("invariants", verify::invariant_suite);
  std::size_t failed = 0;
  for (const auto& o : all) {
    if (!o.passed) {
      std::cerr << "failed: " << o.suite << "/" << o.name << "\n";
      ++failed;
    }
  }
  std::cout << (failed ? "FAILED " : "OK ") << all.size() - failed << "/" << all.size() << " checks passed\n";
  return failed ? kExitRuntime : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot multi-speaker TTS: corpus, features, training, synthesis, evaluation"};
  app.require_subcommand(1);

  GenToyArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-toy", "Generate the deterministic synthetic toy corpus");
  gen_cmd->add_option("--speakers", gen.opts.n_speakers, "Number of speakers (>= 2)")->required();
  gen_cmd->add_option("--utts", gen.opts.utts_per_speaker, "Utterances per speaker (>= 2)")->required();
  gen_cmd->add_option("--seed", gen.opts.seed, "Corpus seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--min-text", gen.opts.min_text, "Shortest text")->capture_default_str();
  gen_cmd->add_option("--max-text", gen.opts.max_text, "Longest text")->capture_default_str();

  FeaturizeArgs feat;
  auto* feat_cmd = app.add_subcommand("featurize", "Compute log-mel features into a cache");
  feat_cmd->add_option("--manifest", feat.manifest, "Manifest TSV")->required();
  feat_cmd->add_option("--cache", feat.cache, "Cache directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Warm-start two-phase training");
  train_cmd->add_option("--config", tr.config, "Config file (key = value)")->required();
  train_cmd->add_option("--phase", tr.phase, "1 | 2 | both")
      ->check(CLI::IsMember({"1", "2", "both"}))
      ->capture_default_str();
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to resume or warm-start from");
  train_cmd->add_option("--set", tr.overrides, "Override a config key (key=value), repeatable");
  train_cmd->add_option("--max-steps", tr.max_steps, "Stop after this many steps and checkpoint");
  tr.ablation.add_to(train_cmd);

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synthesize", "Synthesize a mel spectrogram for one text");
  syn_cmd->add_option("--ckpt", syn.ckpt, "Checkpoint")->required();
  syn_cmd->add_option("--text", syn.text, "Input text")->required();
  syn_cmd->add_option("--refs", syn.refs, "Comma-separated reference WAV files")->required();
  syn_cmd->add_option("--out", syn.out, "Output MELS file")->required();
  syn_cmd->add_option("--wav", syn.wav, "Optional Griffin-Lim WAV output");
  syn_cmd->add_option("--max-frames", syn.max_frames, "Frame cap (0: 10 per character)");
  syn_cmd->add_option("--griffin-lim-iters", syn.griffin_lim_iters, "Griffin-Lim iterations")
      ->capture_default_str();
  syn.ablation.add_to(syn_cmd);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Synthesize a manifest and score it");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest TSV")->required();
  eval_cmd->add_option("--refs-per-utt", ev.refs_per_utt, "References per utterance")->capture_default_str();
  eval_cmd->add_option("--report", ev.report, "Report directory")->required();
  eval_cmd->add_option("--speakers", ev.speakers, "Comma-separated speakers to evaluate");
  eval_cmd->add_option("--label", ev.label, "Report label (default refs<b>)");
  eval_cmd->add_option("--cache", ev.cache, "Feature cache directory");
  eval_cmd->add_option("--save-mels", ev.save_mels, "Directory for synthesized mels");
  eval_cmd->add_option("--embedder", ev.embedder, "Checkpoint whose coarse encoder embeds speakers");
  eval_cmd->add_option("--seed", ev.seed, "Reference sampling seed")->capture_default_str();
  eval_cmd->add_option("--max-frames", ev.max_frames, "Frame cap (0: 10 per character)");
  ev.ablation.add_to(eval_cmd);

  VerifyArgs ver;
  auto* ver_cmd = app.add_subcommand("verify", "Run the oracle and invariant suites");
  ver_cmd->add_option("--suite", ver.suite, "grads | dtw | invariants | all")
      ->check(CLI::IsMember({"grads", "dtw", "invariants", "all"}))
      ->capture_default_str();
  ver_cmd->add_option("--inject-fault", ver.opts.inject_fault, "Corrupt the named gradient check");
  ver_cmd->add_option("--instances", ver.opts.instances, "Random instances per check")->capture_default_str();
  ver_cmd->add_option("--seed", ver.opts.seed, "Instance seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen_toy(gen);
    if (*feat_cmd) return run_featurize(feat);
    if (*train_cmd) return run_train(tr);
    if (*syn_cmd) return run_synthesize(syn);
    if (*eval_cmd) return run_evaluate(ev);
    if (*ver_cmd) return run_verify(ver);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
