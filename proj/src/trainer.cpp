#include "attentron/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "attentron/errors.hpp"
#include "attentron/synthesizer.hpp"

namespace attentron {

namespace fs = std::filesystem;

fs::path feature_cache_path(const fs::path& cache_dir, const ManifestEntry& e) {
  return cache_dir / (e.utterance_id + ".mels");
}

dsp::MelSpectrogram load_features(const Manifest& m, std::size_t index, const fs::path& cache_dir) {
  const ManifestEntry& e = m.entries.at(index);
  const fs::path wav = m.resolve_wav(e);
  if (!fs::exists(wav)) throw IoError("missing audio file " + wav.string());
  if (!cache_dir.empty()) {
    const fs::path cached = feature_cache_path(cache_dir, e);
    std::error_code ec;
    if (fs::exists(cached, ec) && fs::last_write_time(cached) >= fs::last_write_time(wav)) {
      return dsp::read_mels(cached);
    }
  }
  const dsp::MelSpectrogram mel = dsp::featurize(dsp::load_wav(wav));
  if (mel.n_frames() == 0) {
    throw LengthError(e.utterance_id + ": no frames after silence trimming (" + wav.string() + ")");
  }
  if (!cache_dir.empty()) {
    std::error_code ec;
    fs::create_directories(cache_dir, ec);
    dsp::write_mels(feature_cache_path(cache_dir, e), mel);
  }
  return mel;
}

FeaturizeReport featurize_manifest(const Manifest& m, const fs::path& cache_dir) {
  FeaturizeReport r;
  std::error_code ec;
  fs::create_directories(cache_dir, ec);
  if (ec) throw IoError("cannot create cache directory " + cache_dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const ManifestEntry& e = m.entries[i];
    try {
      const fs::path cached = feature_cache_path(cache_dir, e);
      const fs::path wav = m.resolve_wav(e);
      if (fs::exists(cached) && fs::exists(wav) &&
          fs::last_write_time(cached) >= fs::last_write_time(wav)) {
        ++r.skipped;
        continue;
      }
      load_features(m, i, cache_dir);
      ++r.written;
    } catch (const Error& err) {
      r.errors.push_back(e.utterance_id + ": " + err.what());
    }
  }
  return r;
}

FeatureStore::FeatureStore(const Manifest& m, fs::path cache_dir) {
  mels_.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) mels_.push_back(load_features(m, i, cache_dir).frames);
}

std::vector<double> ema_smooth(const std::vector<double>& values, double decay) {
  std::vector<double> out;
  out.reserve(values.size());
  double s = values.empty() ? 0.0 : values.front();
  for (double v : values) {
    s = decay * s + (1.0 - decay) * v;
    out.push_back(s);
  }
  return out;
}

fs::path step_checkpoint_path(const fs::path& dir, int phase, int step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "phase%d_step%06d.ckpt", phase, step);
  return dir / buf;
}

fs::path final_checkpoint_path(const fs::path& dir, int phase) {
  return dir / ("phase" + std::to_string(phase) + "_final.ckpt");
}

fs::path loss_log_path(const fs::path& dir) { return dir / "loss_log.csv"; }

namespace {

std::string format_lr(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

class LossLog {
 public:
  LossLog(const fs::path& path, bool append) {
    const bool fresh = !append || !fs::exists(path);
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw IoError("cannot open loss log " + path.string());
    if (fresh) out_ << "step,phase,lr,loss\n";
  }
  void write(const LossRecord& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d,%d,%s,%.9g\n", r.step, r.phase, format_lr(r.lr).c_str(),
                  r.loss);
    out_ << buf;
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct PhaseData {
  Manifest manifest;
  std::unique_ptr<FeatureStore> features;
};

PhaseData load_phase_data(const TrainConfig& cfg, int phase) {
  const fs::path& path = phase == 1 ? cfg.manifest_phase1 : cfg.manifest_phase2;
  if (path.empty()) {
    throw ConfigError("manifest_phase" + std::to_string(phase) + " is not set");
  }
  PhaseData d;
  d.manifest = read_manifest(path);
  if (phase == 2 && !cfg.held_out_speakers.empty()) {
    d.manifest = d.manifest.exclude_speakers(cfg.held_out_speakers);
  }
  if (d.manifest.size() == 0) {
    throw InputError("phase " + std::to_string(phase) + " manifest has no usable entries");
  }
  if (!cfg.include_target_in_refs) d.manifest.require_reference_pairs();
  d.features = std::make_unique<FeatureStore>(d.manifest, cfg.cache_dir);
  return d;
}

// Parameter gradients summed over the batch, then divided by its size.
// Examples are split into contiguous chunks, one per worker, and chunk
// sums are added in chunk order, so results depend only on the thread count.
double batch_gradients(const Model<float>& model, const std::vector<Example<float>>& batch,
                       const std::vector<ForwardOptions>& opts, int threads,
                       Gradients<float>& grads) {
  const std::size_t n = batch.size();
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<Gradients<float>> partial(workers, model.params.zero_gradients());
  std::vector<double> losses(n, 0.0);
  std::vector<std::exception_ptr> failures(workers);
  auto run_chunk = [&](std::size_t w) {
    try {
      for (std::size_t i = w * n / workers; i < (w + 1) * n / workers; ++i) {
        losses[i] = example_loss(model, batch[i], opts[i], &partial[w]);
      }
    } catch (...) {
      failures[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    run_chunk(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run_chunk, w);
    for (auto& th : pool) th.join();
  }
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  grads = std::move(partial[0]);
  for (std::size_t w = 1; w < workers; ++w) {
    for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += partial[w][k];
  }
  const float inv = 1.0f / static_cast<float>(n);
  for (auto& g : grads) g *= inv;
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(n);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (cfg.checkpoint_dir.empty()) throw ConfigError("checkpoint_dir is not set");
  std::error_code ec;
  fs::create_directories(cfg.checkpoint_dir, ec);
  if (ec) {
    throw IoError("cannot create checkpoint directory " + cfg.checkpoint_dir.string() + ": " +
                  ec.message());
  }
  std::ostream& log = opts.log ? *opts.log : std::clog;

  std::vector<int> phases;
  if (opts.phases != PhaseSelection::phase2) phases.push_back(1);
  if (opts.phases != PhaseSelection::phase1) phases.push_back(2);

  Model<float> model = Model<float>::create(cfg.model, derive_seed({cfg.seed, 0x696e6974ULL}));
  std::optional<LoadedCheckpoint> resumed;
  if (opts.resume) {
    resumed = load_checkpoint(*opts.resume, cfg.model);
    model = resumed->model;
    log << "resumed from " << opts.resume->string() << " (phase "
        << int(resumed->meta.phase) << ", step " << resumed->meta.step << ")\n";
  }

  TrainResult result;
  LossLog loss_log(loss_log_path(cfg.checkpoint_dir), opts.resume.has_value());
  int budget = opts.max_steps;

  for (int phase : phases) {
    const PhaseSchedule& sched = cfg.schedule(phase);
    int start = 0;
    AdamState<float> adam = AdamState<float>::zeros_like(model.params, cfg.adam);
    if (resumed) {
      if (resumed->meta.phase > phase) continue;  // this phase is already done
      if (resumed->meta.phase == phase) {
        start = static_cast<int>(resumed->meta.step);
        if (resumed->has_optimizer) {
          adam = resumed->optimizer;
          adam.hyper = cfg.adam;
        }
      }
      // An earlier-phase checkpoint warm-starts this phase with fresh moments.
    }
    if (start >= sched.steps) continue;

    PhaseData data = load_phase_data(cfg, phase);
    log << "phase " << phase << ": " << data.manifest.size() << " utterances, "
        << data.manifest.speakers().size() << " speakers, steps " << start << ".."
        << sched.steps << "\n";
    bool warned_replacement = false;

    for (int step = start; step < sched.steps; ++step) {
      if (budget == 0) {
        const auto path = step_checkpoint_path(cfg.checkpoint_dir, phase, step);
        save_checkpoint(path, model, &adam, {static_cast<std::uint64_t>(step),
                                             static_cast<std::uint8_t>(phase)});
        result.last_checkpoint = path;
        result.meta = {static_cast<std::uint64_t>(step), static_cast<std::uint8_t>(phase)};
        return result;
      }
      const double lr = lr_schedule(step, phase, cfg);
      Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(phase),
                           static_cast<std::uint64_t>(step)}));
      std::vector<Example<float>> batch(static_cast<std::size_t>(cfg.batch_size));
      std::vector<ForwardOptions> fopts(batch.size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t target = rng.below(data.manifest.size());
        bool with_replacement = false;
        const auto refs = sample_references(data.manifest, target,
                                            static_cast<std::size_t>(cfg.n_refs_train), rng,
                                            cfg.include_target_in_refs, &with_replacement);
        if (with_replacement && !warned_replacement) {
          log << "warning: speaker '" << data.manifest.entries[target].speaker_id
              << "' has fewer than " << cfg.n_refs_train
              << " other utterances; sampling references with replacement\n";
          warned_replacement = true;
        }
        batch[b].text_ids = text_to_ids(data.manifest.entries[target].text);
        batch[b].target = (*data.features)[target];
        for (std::size_t r : refs) batch[b].references.push_back((*data.features)[r]);
        fopts[b] = {true, derive_seed({cfg.seed, static_cast<std::uint64_t>(phase),
                                       static_cast<std::uint64_t>(step), b, 0x64726f70ULL})};
      }

      Gradients<float> grads;
      const double loss = batch_gradients(model, batch, fopts, cfg.threads, grads);
      const CheckpointMeta before{static_cast<std::uint64_t>(step),
                                  static_cast<std::uint8_t>(phase)};
      auto diverge = [&](const std::string& why) {
        const auto path = cfg.checkpoint_dir / "diverged.ckpt";
        save_checkpoint(path, model, &adam, before);
        throw TrainingError("phase " + std::to_string(phase) + " step " +
                            std::to_string(step + 1) + ": " + why +
                            "; diagnostic checkpoint written to " + path.string());
      };
      if (!std::isfinite(loss)) diverge("non-finite loss");
      try {
        adam_step(model.params, grads, adam, lr);
      } catch (const OptimizerError& e) {
        diverge(e.what());
      }

      const LossRecord rec{step + 1, phase, lr, loss};
      result.losses.push_back(rec);
      if ((step + 1) % cfg.log_every == 0 || step + 1 == sched.steps) {
        loss_log.write(rec);
        log << "phase " << phase << " step " << step + 1 << " lr " << format_lr(lr) << " loss "
            << loss << "\n";
      }
      const CheckpointMeta after{static_cast<std::uint64_t>(step + 1),
                                 static_cast<std::uint8_t>(phase)};
      if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < sched.steps) {
        const auto path = step_checkpoint_path(cfg.checkpoint_dir, phase, step + 1);
        save_checkpoint(path, model, &adam, after);
        result.last_checkpoint = path;
      }
      result.meta = after;
      if (budget > 0) --budget;
    }
    const auto path = final_checkpoint_path(cfg.checkpoint_dir, phase);
    save_checkpoint(path, model, &adam,
                    {static_cast<std::uint64_t>(sched.steps), static_cast<std::uint8_t>(phase)});
    result.last_checkpoint = path;
    result.meta = {static_cast<std::uint64_t>(sched.steps), static_cast<std::uint8_t>(phase)};
    log << "phase " << phase << " complete: " << path.string() << "\n";
  }
  return result;
}

std::vector<LossRecord> read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loss log " + path.string());
  std::vector<LossRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    LossRecord r;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf", &r.step, &r.phase, &r.lr, &r.loss) != 4) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed loss record");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace attentron
