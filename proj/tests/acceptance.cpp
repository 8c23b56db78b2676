// Acceptance run: one PASS/FAIL line per criterion. Usage:
//   acceptance <path-to-attentron-cli> <work-dir>
// Exit status is nonzero when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "attentron/checkpoint.hpp"
#include "attentron/config.hpp"
#include "attentron/dsp.hpp"
#include "attentron/manifest.hpp"
#include "attentron/metrics.hpp"
#include "attentron/toy_corpus.hpp"
#include "attentron/trainer.hpp"
#include "attentron/verify.hpp"

using namespace attentron;
namespace fs = std::filesystem;

namespace {

// --- pinned tolerances -------------------------------------------------------

constexpr double kGradTolerance = 1e-4;
constexpr int kGradInstances = 20;
constexpr double kGradSeconds = 120.0;

constexpr int kDtwPairs = 200;
constexpr double kDtwTolerance = 1e-9;
constexpr double kDtwSeconds = 10.0;

constexpr double kPermutationTolerance = 1e-6;
constexpr double kRowSumTolerance = 1e-6;
constexpr double kCopiesTolerance = 1e-7;
constexpr double kInvariantSeconds = 30.0;

constexpr double kSameSpeakerFraction = 0.70;
constexpr std::size_t kHeldOutUtterances = 40;
constexpr double kMoreRefsSlackDb = 0.1;
constexpr int kMaxPhase2Steps = 5000;
constexpr double kCloningSeconds = 30.0 * 60.0;

constexpr int kSmoothEarlyStep = 50;
constexpr int kSmoothLateStep = 2000;

// --- helpers -----------------------------------------------------------------

struct Verdict {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

struct Env {
  fs::path cli;
  fs::path work;
  fs::path log;
};

// Runs the CLI with output appended to the work log; throws on a nonzero exit.
void cli(const Env& env, const std::string& args) {
  const std::string cmd = "\"" + env.cli.string() + "\" " + args + " >> \"" + env.log.string() + "\" 2>&1";
  {
    std::ofstream l(env.log, std::ios::app);
    l << "$ attentron " << args << "\n";
  }
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw Error("command failed (" + std::to_string(rc) + "): attentron " + args);
}

int cli_status(const Env& env, const std::string& args) {
  const std::string cmd = "\"" + env.cli.string() + "\" " + args + " >> \"" + env.log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Mat<double> random_mat(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// --- criterion 1 ---------------------------------------------------------------

Verdict gradient_oracle() {
  const auto t0 = Clock::now();
  verify::VerifyOptions opts;
  opts.instances = kGradInstances;
  const auto outcomes = verify::gradient_suite(opts);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::vector<std::string> failing;
  for (const auto& o : outcomes) {
    worst = std::max(worst, o.max_error);
    if (o.max_error >= kGradTolerance || o.instances < static_cast<std::size_t>(kGradInstances)) {
      failing.push_back(fmt("%s=%.2e", o.name.c_str(), o.max_error));
    }
  }
  std::string detail = fmt("%zu checks x %d instances, worst rel err %.2e (tol %.0e), %.1fs (limit %.0fs)",
                           outcomes.size(), kGradInstances, worst, kGradTolerance, secs, kGradSeconds);
  if (!failing.empty()) {
    detail += "; failing:";
    for (const auto& f : failing) detail += " " + f;
  }
  return {failing.empty() && secs < kGradSeconds, detail};
}

// --- criterion 2 ---------------------------------------------------------------

double brute_force_dtw(const Mat<double>& a, const Mat<double>& b, Eigen::Index i, Eigen::Index j) {
  const double here = (a.row(i) - b.row(j)).norm();
  if (i == a.rows() - 1 && j == b.rows() - 1) return here;
  double best = std::numeric_limits<double>::infinity();
  if (i + 1 < a.rows()) best = std::min(best, brute_force_dtw(a, b, i + 1, j));
  if (j + 1 < b.rows()) best = std::min(best, brute_force_dtw(a, b, i, j + 1));
  if (i + 1 < a.rows() && j + 1 < b.rows()) best = std::min(best, brute_force_dtw(a, b, i + 1, j + 1));
  return here + best;
}

Verdict dtw_oracle() {
  const auto t0 = Clock::now();
  Rng rng(derive_seed({0xd7, 2}));
  double worst = 0.0;
  for (int k = 0; k < kDtwPairs; ++k) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto m = static_cast<Eigen::Index>(1 + rng.below(6));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(3));
    const Mat<double> a = random_mat(rng, n, d), b = random_mat(rng, m, d);
    worst = std::max(worst, std::abs(metrics::dtw_align(a, b).cost - brute_force_dtw(a, b, 0, 0)));
  }
  const double secs = seconds_since(t0);
  return {worst <= kDtwTolerance && secs < kDtwSeconds,
          fmt("%d pairs, max |dp - brute force| %.2e (tol %.0e), %.2fs (limit %.0fs)", kDtwPairs, worst,
              kDtwTolerance, secs, kDtwSeconds)};
}

// --- criterion 3 ---------------------------------------------------------------

Verdict attention_invariants() {
  const auto t0 = Clock::now();
  const auto outcomes = verify::invariant_suite({});
  const double secs = seconds_since(t0);
  const std::map<std::string, double> pinned{{"reference_permutation", kPermutationTolerance},
                                             {"padded_frames_zero_weight", 0.0},
                                             {"context_in_convex_hull", 0.0},
                                             {"attention_row_sum", kRowSumTolerance},
                                             {"coarse_multi_of_copies", kCopiesTolerance}};
  bool ok = secs < kInvariantSeconds;
  std::string detail;
  for (const auto& [name, tol] : pinned) {
    auto it = std::find_if(outcomes.begin(), outcomes.end(), [&](const auto& o) { return o.name == name; });
    if (it == outcomes.end()) {
      ok = false;
      detail += name + "=missing ";
      continue;
    }
    const bool pass = tol == 0.0 ? it->max_error == 0.0 : it->max_error < tol;
    ok = ok && pass;
    detail += fmt("%s=%.1e%s ", name.c_str(), it->max_error, pass ? "" : "(FAIL)");
  }
  detail += fmt("%.1fs (limit %.0fs)", secs, kInvariantSeconds);
  return {ok, detail};
}

// --- criterion 4 ---------------------------------------------------------------

Verdict metric_fixed_points() {
  Rng rng(derive_seed({0x4d, 4}));
  dsp::MelSpectrogram a;
  a.frames = random_mat(rng, 12, dsp::kNumMels).cast<float>();
  const double self = metrics::mcd_dtw(a, a);

  dsp::MelSpectrogram slow;
  slow.frames.resize(3 * a.n_frames(), a.n_mels());
  for (Eigen::Index i = 0; i < a.n_frames(); ++i) {
    for (int r = 0; r < 3; ++r) slow.frames.row(3 * i + r) = a.frames.row(i);
  }
  const double tempo = metrics::mcd_dtw(a, slow);

  const std::vector<double> v{0.5, -1.5, 2.0}, neg{-0.5, 1.5, -2.0}, e1{3.0, 0.0}, e2{0.0, 2.0};
  const bool cos_ok = metrics::cosine_similarity(v, v) == 1.0 && metrics::cosine_similarity(v, neg) == -1.0 &&
                      metrics::cosine_similarity(e1, e2) == 0.0;
  const bool collapse_ok = metrics::is_collapsed(41, 10) && !metrics::is_collapsed(40, 10);
  return {self == 0.0 && tempo == 0.0 && cos_ok && collapse_ok,
          fmt("mcd(a,a)=%g, mcd(a,3x slower a)=%g, cosine cases %s, collapse 41/40 at L_t=10 %s", self, tempo,
              cos_ok ? "exact" : "WRONG", collapse_ok ? "strict" : "WRONG")};
}

// --- criterion 5 and 6 share one toy training run ------------------------------

struct ToyRun {
  fs::path corpus;
  fs::path cache;
  fs::path config;
  fs::path ce_on;
  fs::path ce_off;
  fs::path reports;
  double seconds = 0.0;
  std::string error;
};

ToyRun run_toy_experiment(const Env& env) {
  ToyRun r;
  r.corpus = env.work / "corpus";
  r.cache = env.work / "cache";
  r.ce_on = env.work / "ce_on";
  r.ce_off = env.work / "ce_off";
  r.reports = env.work / "reports";
  r.config = env.work / "toy.cfg";
  const auto t0 = Clock::now();
  try {
    cli(env, "gen-toy --speakers 10 --utts 20 --seed 7 --out \"" + r.corpus.string() + "\"");
    const Manifest all = read_manifest(r.corpus / "manifest.tsv");
    write_manifest(r.corpus / "phase1.tsv", all.filter_speakers({"spk00"}));
    write_manifest(r.corpus / "heldout.tsv", all.filter_speakers({"spk08", "spk09"}));
    cli(env, "featurize --manifest \"" + (r.corpus / "manifest.tsv").string() + "\" --cache \"" + r.cache.string() + "\"");

    spit(r.config,
         "profile = toy\n"
         "model_width = 64\n"
         "phase1_steps = 300\nphase1_lr = 1e-3\nphase1_decay_step = 200\nphase1_lr2 = 1e-4\n"
         "phase2_steps = 5000\nphase2_lr = 1e-3\nphase2_decay_step = 3333\nphase2_lr2 = 1e-4\n"
         "batch_size = 8\nn_refs_train = 4\nseed = 1\nlog_every = 1\ncheckpoint_every = 1000\n"
         "threads = 4\n"
         "manifest_phase1 = corpus/phase1.tsv\nmanifest_phase2 = corpus/manifest.tsv\n"
         "cache_dir = cache\nheld_out_speakers = spk08,spk09\n");
    const TrainConfig parsed = load_train_config(r.config);
    if (parsed.phase2.steps > kMaxPhase2Steps) throw Error("phase-2 budget exceeded");

    cli(env, "train --config \"" + r.config.string() + "\" --set checkpoint_dir=ce_on");
    cli(env, "train --config \"" + r.config.string() + "\" --coarse off --set checkpoint_dir=ce_off");

    const std::string heldout = "\"" + (r.corpus / "heldout.tsv").string() + "\"";
    const std::string common = " --manifest " + heldout + " --cache \"" + r.cache.string() + "\" --report \"" +
                               r.reports.string() + "\"";
    const std::string on = "\"" + final_checkpoint_path(r.ce_on, 2).string() + "\"";
    const std::string off = "\"" + final_checkpoint_path(r.ce_off, 2).string() + "\"";
    cli(env, "evaluate --ckpt " + on + common + " --refs-per-utt 8 --label refs8 --save-mels \"" +
                 (env.work / "mels_refs8").string() + "\"");
    cli(env, "evaluate --ckpt " + on + common + " --refs-per-utt 1 --label refs1");
    cli(env, "evaluate --ckpt " + off + common + " --refs-per-utt 8 --label no_coarse");
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = seconds_since(t0);
  return r;
}

std::size_t speaker_index(const std::string& speaker_id) { return std::stoul(speaker_id.substr(3)); }

Verdict toy_cloning(const ToyRun& run) {
  if (!run.error.empty()) return {false, "toy run failed: " + run.error};
  const Manifest heldout = read_manifest(run.corpus / "heldout.tsv");
  const auto refs8 = metrics::parse_report(slurp(run.reports / "refs8.csv"));
  const auto s8 = metrics::parse_summary(slurp(run.reports / "refs8_summary.txt"));
  const auto s1 = metrics::parse_summary(slurp(run.reports / "refs1_summary.txt"));
  const auto soff = metrics::parse_summary(slurp(run.reports / "no_coarse_summary.txt"));
  if (refs8.size() != kHeldOutUtterances || heldout.size() != kHeldOutUtterances) {
    return {false, fmt("expected %zu held-out utterances, got %zu", kHeldOutUtterances, refs8.size())};
  }

  // Cross-speaker reference: the other held-out voice reading the same text.
  std::size_t closer = 0;
  for (const auto& rec : refs8) {
    const ManifestEntry& e = heldout.entries[heldout.index_of(rec.utterance_id)];
    const std::size_t other = e.speaker_id == "spk08" ? 9 : 8;
    const dsp::MelSpectrogram synth = dsp::read_mels(run.reports.parent_path() / "mels_refs8" / (rec.utterance_id + ".mel"));
    const dsp::MelSpectrogram cross =
        dsp::featurize(render_toy_utterance(toy_speaker(7, other), e.text, derive_seed({0xc055, other})));
    if (rec.mcd_dtw < metrics::mcd_dtw(synth, cross)) ++closer;
  }
  const double frac = static_cast<double>(closer) / kHeldOutUtterances;
  const bool a = frac >= kSameSpeakerFraction;
  const bool b = s8.mean_mcd <= s1.mean_mcd + kMoreRefsSlackDb;
  const bool c = s8.collapse_count <= soff.collapse_count;
  const bool t = run.seconds <= kCloningSeconds;
  return {a && b && c && t,
          fmt("(a) same<cross %zu/%zu=%.2f (need >=%.2f) %s; (b) mcd refs8 %.3f vs refs1 %.3f (+%.1f) %s; "
              "(c) collapses CE on %zu vs off %zu %s; %.0fs (limit %.0fs)",
              closer, kHeldOutUtterances, frac, kSameSpeakerFraction, a ? "ok" : "FAIL", s8.mean_mcd, s1.mean_mcd,
              kMoreRefsSlackDb, b ? "ok" : "FAIL", s8.collapse_count, soff.collapse_count, c ? "ok" : "FAIL",
              run.seconds, kCloningSeconds)};
}

Verdict training_sanity(const Env& env, const ToyRun& run) {
  std::string detail;
  bool ok = true;

  // Smoothed phase-2 loss from the toy run.
  if (!run.error.empty()) {
    ok = false;
    detail += "toy run failed; ";
  } else {
    std::vector<double> losses;
    for (const auto& rec : read_loss_log(loss_log_path(run.ce_on))) {
      if (rec.phase == 2) losses.push_back(rec.loss);
    }
    if (losses.size() < static_cast<std::size_t>(kSmoothLateStep)) {
      ok = false;
      detail += "loss log too short; ";
    } else {
      const auto s = ema_smooth(losses);
      const double early = s[kSmoothEarlyStep - 1], late = s[kSmoothLateStep - 1];
      ok = ok && late < early;
      detail += fmt("smoothed loss step %d %.4f -> step %d %.4f%s; ", kSmoothEarlyStep, early, kSmoothLateStep, late,
                    late < early ? "" : " (FAIL)");
    }
  }

  // Replay and resume on a short run.
  try {
    const fs::path corpus = env.work / "corpus";
    const fs::path cfg = env.work / "short.cfg";
    spit(cfg,
         "profile = toy\nmodel_width = 16\n"
         "phase1_steps = 12\nphase1_decay_step = 8\nphase2_steps = 8\nphase2_decay_step = 4\n"
         "batch_size = 2\nn_refs_train = 2\nseed = 3\nlog_every = 1\ncheckpoint_every = 4\n"
         "manifest_phase1 = corpus/phase1.tsv\nmanifest_phase2 = corpus/manifest.tsv\ncache_dir = cache\n"
         "held_out_speakers = spk08,spk09\n");
    const std::string base = "train --config \"" + cfg.string() + "\" --set checkpoint_dir=";
    cli(env, base + "replay_a");
    cli(env, base + "replay_b");
    const bool replay = slurp(env.work / "replay_a" / "loss_log.csv") == slurp(env.work / "replay_b" / "loss_log.csv");

    cli(env, base + "resumed --max-steps 15");
    cli(env, base + "resumed --resume \"" + step_checkpoint_path(env.work / "resumed", 2, 3).string() + "\"");
    const bool resume_log =
        slurp(env.work / "replay_a" / "loss_log.csv") == slurp(env.work / "resumed" / "loss_log.csv");
    const bool resume_ckpt = slurp(final_checkpoint_path(env.work / "replay_a", 2)) ==
                             slurp(final_checkpoint_path(env.work / "resumed", 2));
    ok = ok && replay && resume_log && resume_ckpt;
    detail += fmt("replay log identical %s; resumed log identical %s; resumed checkpoint bitwise %s",
                  replay ? "yes" : "NO", resume_log ? "yes" : "NO", resume_ckpt ? "yes" : "NO");
  } catch (const std::exception& e) {
    ok = false;
    detail += std::string("short run failed: ") + e.what();
  }
  return {ok, detail};
}

// --- criterion 7 ---------------------------------------------------------------

Verdict schedule_conformance() {
  const TrainConfig cfg = TrainConfig::full();
  struct Case {
    int phase, step;
    double lr;
  };
  const Case cases[] = {{1, 0, 1e-3},     {1, 19999, 1e-3}, {1, 20000, 1e-4},
                        {2, 0, 1e-4},     {2, 49999, 1e-4}, {2, 50000, 1e-5}};
  std::string detail;
  bool ok = true;
  for (const auto& c : cases) {
    const double got = lr_schedule(c.step, c.phase, cfg);
    ok = ok && got == c.lr;
    detail += fmt("p%d@%d=%g%s ", c.phase, c.step, got, got == c.lr ? "" : "(FAIL)");
  }
  return {ok, detail};
}

// --- criterion 8 ---------------------------------------------------------------

Verdict format_round_trips(const Env& env) {
  const fs::path dir = env.work / "formats";
  fs::create_directories(dir);
  ModelConfig mc = ModelConfig::uniform(16);
  const auto model = Model<float>::create(mc, 11);
  auto opt = AdamState<float>::zeros_like(model.params);
  Rng rng(12);
  for (auto& m : opt.first_moment) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  }
  opt.step_count = 77;
  save_checkpoint(dir / "a.ckpt", model, &opt, {77, 2});
  const LoadedCheckpoint loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded.model, &loaded.optimizer, loaded.meta);
  const bool ckpt = slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt");

  dsp::MelSpectrogram mel;
  mel.frames = random_mat(rng, 17, dsp::kNumMels).cast<float>();
  dsp::write_mels(dir / "a.mels", mel);
  const dsp::MelSpectrogram back = dsp::read_mels(dir / "a.mels");
  dsp::write_mels(dir / "b.mels", back);
  const bool mels = back.frames == mel.frames && slurp(dir / "a.mels") == slurp(dir / "b.mels");

  // Malformed manifests: each must be rejected naming its line.
  const std::vector<std::pair<std::string, int>> bad{
      {"u1\ts\ta.wav\thi\nu2\ts\tb.wav\n", 2},
      {"# c\n\nu1\ts\t\thi\n", 3},
      {"u1\ts\ta\thi\nu2\ts\tb\tx\nu1\ts\tc\ty\n", 3},
      {"u1\ts\ta\thi\textra\n", 1}};
  bool manifest = true;
  for (const auto& [text, line] : bad) {
    try {
      parse_manifest(text, "bad.tsv");
      manifest = false;
    } catch (const FormatError& e) {
      manifest = manifest && std::string(e.what()).find("bad.tsv:" + std::to_string(line) + ":") != std::string::npos;
    }
  }
  // The CLI reports the same failure as a nonzero exit.
  spit(dir / "bad.tsv", bad[0].first);
  const bool cli_rejects = cli_status(env, "featurize --manifest \"" + (dir / "bad.tsv").string() + "\" --cache \"" +
                                               (dir / "c").string() + "\"") != 0;
  return {ckpt && mels && manifest && cli_rejects,
          fmt("checkpoint bitwise %s; mels bitwise %s; malformed manifest lines located %s; cli exit nonzero %s",
              ckpt ? "yes" : "NO", mels ? "yes" : "NO", manifest ? "yes" : "NO", cli_rejects ? "yes" : "NO")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: acceptance <attentron-cli> <work-dir>\n";
    return 2;
  }
  Env env{fs::absolute(argv[1]), fs::absolute(argv[2]), {}};
  fs::remove_all(env.work);
  fs::create_directories(env.work);
  env.log = env.work / "commands.log";
  fs::current_path(env.work);

  int failures = 0;
  auto report = [&](int n, const std::string& title, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.passed) ++failures;
    std::cout << "criterion " << n << " " << (v.passed ? "PASS" : "FAIL") << " " << title << ": " << v.detail
              << std::endl;
  };

  report(1, "gradient oracle", gradient_oracle);
  report(2, "dtw oracle", dtw_oracle);
  report(3, "attention invariants", attention_invariants);
  report(4, "metric fixed points", metric_fixed_points);
  const ToyRun run = run_toy_experiment(env);
  report(5, "toy cloning", [&] { return toy_cloning(run); });
  report(6, "training loop", [&] { return training_sanity(env, run); });
  report(7, "schedule", schedule_conformance);
  report(8, "format round trips", [&] { return format_round_trips(env); });

  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criterion(s) failed" : "acceptance: all passed")
            << std::endl;
  return failures ? 1 : 0;
}
