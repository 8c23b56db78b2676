#include "attentron/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "attentron/errors.hpp"
#include "parse_util.hpp"

namespace attentron {

using detail::parse_bool;
using detail::parse_double;
using detail::parse_int;
using detail::parse_u64;
using detail::trim;

const PhaseSchedule& TrainConfig::schedule(int phase) const {
  if (phase == 1) return phase1;
  if (phase == 2) return phase2;
  throw ConfigError("phase must be 1 or 2, got " + std::to_string(phase));
}

void TrainConfig::validate() const {
  model.validate();
  for (int p : {1, 2}) {
    const PhaseSchedule& s = schedule(p);
    const std::string tag = "phase" + std::to_string(p);
    if (s.steps < 0) throw ConfigError(tag + "_steps must be non-negative");
    if (s.steps > 0 && s.decay_step >= s.steps) {
      throw ConfigError(tag + "_decay_step (" + std::to_string(s.decay_step) +
                        ") must be below " + tag + "_steps (" + std::to_string(s.steps) + ")");
    }
    if (!(s.lr > 0.0) || !(s.lr2 > 0.0)) throw ConfigError(tag + " learning rates must be positive");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (n_refs_train < 1) throw ConfigError("n_refs_train must be at least 1");
  if (log_every < 1) throw ConfigError("log_every must be at least 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1 ||
      !(adam.epsilon > 0) || adam.weight_decay < 0) {
    throw ConfigError("invalid Adam hyperparameters");
  }
}

TrainConfig TrainConfig::full() { return TrainConfig{}; }

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.model = ModelConfig::uniform(64);
  c.phase1 = {300, 1e-3, 200, 1e-4};
  c.phase2 = {5000, 1e-3, 3333, 1e-4};
  c.batch_size = 4;
  c.n_refs_train = 4;
  c.log_every = 25;
  c.checkpoint_every = 500;
  return c;
}

double lr_schedule(int step, int phase, const TrainConfig& cfg) {
  const PhaseSchedule& s = cfg.schedule(phase);
  return step < s.decay_step ? s.lr : s.lr2;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  const std::filesystem::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value,
                     const std::filesystem::path& base_dir) {
  if (cfg.model.apply(key, value)) return true;
  for (int p : {1, 2}) {
    PhaseSchedule& s = p == 1 ? cfg.phase1 : cfg.phase2;
    const std::string tag = "phase" + std::to_string(p) + "_";
    if (key == tag + "steps") return s.steps = parse_int(key, value), true;
    if (key == tag + "lr") return s.lr = parse_double(key, value), true;
    if (key == tag + "decay_step") return s.decay_step = parse_int(key, value), true;
    if (key == tag + "lr2") return s.lr2 = parse_double(key, value), true;
  }
  if (key == "model_width") {
    const ModelConfig m = ModelConfig::uniform(parse_int(key, value));
    cfg.model.d_char = m.d_char;
    cfg.model.conv_channels = m.conv_channels;
    cfg.model.lstm_cells = m.lstm_cells;
    cfg.model.d_m = m.d_m;
    cfg.model.d_v = m.d_v;
    cfg.model.d_g = m.d_g;
    cfg.model.prenet_dim = m.prenet_dim;
    cfg.model.d_dec = m.d_dec;
    cfg.model.d_text_attn = m.d_text_attn;
  } else if (key == "batch_size") {
    cfg.batch_size = parse_int(key, value);
  } else if (key == "n_refs_train") {
    cfg.n_refs_train = parse_int(key, value);
  } else if (key == "include_target_in_refs") {
    cfg.include_target_in_refs = parse_bool(key, value);
  } else if (key == "adam_beta1") {
    cfg.adam.beta1 = parse_double(key, value);
  } else if (key == "adam_beta2") {
    cfg.adam.beta2 = parse_double(key, value);
  } else if (key == "adam_epsilon") {
    cfg.adam.epsilon = parse_double(key, value);
  } else if (key == "weight_decay") {
    cfg.adam.weight_decay = parse_double(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "log_every") {
    cfg.log_every = parse_int(key, value);
  } else if (key == "checkpoint_every") {
    cfg.checkpoint_every = parse_int(key, value);
  } else if (key == "threads") {
    cfg.threads = parse_int(key, value);
  } else if (key == "manifest_phase1") {
    cfg.manifest_phase1 = resolve(base_dir, value);
  } else if (key == "manifest_phase2") {
    cfg.manifest_phase2 = resolve(base_dir, value);
  } else if (key == "cache_dir") {
    cfg.cache_dir = resolve(base_dir, value);
  } else if (key == "checkpoint_dir") {
    cfg.checkpoint_dir = resolve(base_dir, value);
  } else if (key == "held_out_speakers") {
    cfg.held_out_speakers = split_list(value);
  } else {
    return false;
  }
  return true;
}

TrainConfig parse_train_config(std::string_view text, const std::filesystem::path& base_dir,
                               const std::string& source) {
  struct Line {
    std::size_t number;
    std::string key, value;
  };
  std::vector<Line> lines;
  std::string profile = "full";
  std::istringstream is{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    Line l{lineno, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (l.key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (l.key == "profile") {
      if (l.value != "full" && l.value != "toy") {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown profile '" +
                          l.value + "' (expected full or toy)");
      }
      profile = l.value;
      continue;
    }
    lines.push_back(std::move(l));
  }

  TrainConfig cfg = profile == "toy" ? TrainConfig::toy() : TrainConfig::full();
  for (const Line& l : lines) {
    try {
      if (!apply_train_key(cfg, l.key, l.value, base_dir)) {
        throw ConfigError("unknown key '" + l.key + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(l.number) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), path.parent_path(), path.string());
}

std::string format_train_config(const TrainConfig& cfg) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream os;
  for (const auto& [k, v] : cfg.model.to_map()) os << k << " = " << v << '\n';
  for (int p : {1, 2}) {
    const PhaseSchedule& s = cfg.schedule(p);
    const std::string tag = "phase" + std::to_string(p) + "_";
    os << tag << "steps = " << s.steps << '\n'
       << tag << "lr = " << num(s.lr) << '\n'
       << tag << "decay_step = " << s.decay_step << '\n'
       << tag << "lr2 = " << num(s.lr2) << '\n';
  }
  os << "batch_size = " << cfg.batch_size << '\n'
     << "n_refs_train = " << cfg.n_refs_train << '\n'
     << "include_target_in_refs = " << (cfg.include_target_in_refs ? "true" : "false") << '\n'
     << "adam_beta1 = " << num(cfg.adam.beta1) << '\n'
     << "adam_beta2 = " << num(cfg.adam.beta2) << '\n'
     << "adam_epsilon = " << num(cfg.adam.epsilon) << '\n'
     << "weight_decay = " << num(cfg.adam.weight_decay) << '\n'
     << "seed = " << cfg.seed << '\n'
     << "log_every = " << cfg.log_every << '\n'
     << "checkpoint_every = " << cfg.checkpoint_every << '\n'
     << "threads = " << cfg.threads << '\n';
  auto path_line = [&](const char* k, const std::filesystem::path& p) {
    if (!p.empty()) os << k << " = " << p.string() << '\n';
  };
  path_line("manifest_phase1", cfg.manifest_phase1);
  path_line("manifest_phase2", cfg.manifest_phase2);
  path_line("cache_dir", cfg.cache_dir);
  path_line("checkpoint_dir", cfg.checkpoint_dir);
  if (!cfg.held_out_speakers.empty()) {
    os << "held_out_speakers = ";
    for (std::size_t i = 0; i < cfg.held_out_speakers.size(); ++i) {
      os << (i ? "," : "") << cfg.held_out_speakers[i];
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace attentron
