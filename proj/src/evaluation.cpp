#include "attentron/evaluation.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

#include "attentron/errors.hpp"
#include "attentron/trainer.hpp"

namespace attentron {

std::vector<metrics::EvalRecord> evaluate_manifest(const Model<float>& model,
                                                   const Model<float>* embedder,
                                                   const Manifest& manifest,
                                                   const EvalOptions& opts) {
  if (opts.refs_per_utt == 0) throw ConfigError("refs per utterance must be at least 1");
  if (embedder && !embedder->config.coarse) {
    throw ConfigError("the similarity embedder needs a coarse encoder");
  }
  const FeatureStore features(manifest, opts.cache_dir);
  if (!opts.save_mels_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(opts.save_mels_dir, ec);
    if (ec) throw IoError("cannot create " + opts.save_mels_dir.string() + ": " + ec.message());
  }

  const std::size_t n = manifest.size();
  std::vector<metrics::EvalRecord> records(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const ManifestEntry& e = manifest.entries[i];
        Rng rng(derive_seed({opts.seed, i, 0x6576616cULL}));
        const auto ref_idx = sample_references(manifest, i, opts.refs_per_utt, rng);
        std::vector<dsp::MelSpectrogram> refs;
        for (std::size_t r : ref_idx) refs.push_back({features[r]});
        const SynthesisResult out = synthesize(model, e.text, refs, opts.max_frames);
        const dsp::MelSpectrogram truth{features[i]};

        metrics::EvalRecord& rec = records[i];
        rec.utterance_id = e.utterance_id;
        rec.frames = static_cast<std::size_t>(out.mel.n_frames());
        rec.text_length = out.text_length;
        rec.mcd_dtw = metrics::mcd_dtw(out.mel, truth);
        rec.similarity = std::numeric_limits<double>::quiet_NaN();
        if (embedder) {
          rec.similarity = metrics::speaker_similarity(*embedder, out.mel, refs);
        }
        rec.collapsed = metrics::is_collapsed(rec.frames, rec.text_length);
        if (!opts.save_mels_dir.empty()) {
          dsp::write_mels(opts.save_mels_dir / (e.utterance_id + ".mel"), out.mel);
        }
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(n)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return records;
}

int threads_from_env() {
  const char* v = std::getenv("ATTENTRON_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("ATTENTRON_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<int>(std::min<long>(n, 256));
}

}  // namespace attentron
