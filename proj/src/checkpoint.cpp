#include "attentron/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "attentron/dsp.hpp"
#include "attentron/errors.hpp"
#include "binary_io.hpp"
#include "parse_util.hpp"

namespace attentron {

namespace {

constexpr std::uint32_t kVersion = 1;

void write_tensor(detail::ByteWriter& w, const std::string& name, const Shape& shape,
                  const Mat<float>& value) {
  if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(0);
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (Eigen::Index i = 0; i < value.size(); ++i) w.f32(value.data()[i]);
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const ParameterSet<float>& params,
                                             const AdamState<float>* optimizer,
                                             CheckpointMeta meta) {
  if (optimizer && (optimizer->first_moment.size() != params.size() ||
                    optimizer->second_moment.size() != params.size())) {
    throw DimensionError("optimizer state does not match the parameter set");
  }
  detail::ByteWriter w;
  w.tag("ATRN");
  w.u32(kVersion);
  w.u64(meta.step);
  w.u8(meta.phase);
  w.u32(static_cast<std::uint32_t>(params.size() * (optimizer ? 3 : 1)));
  for (const auto& p : params) write_tensor(w, p.name, p.shape, p.value);
  if (optimizer) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      write_tensor(w, params[i].name + ".m", params[i].shape, optimizer->first_moment[i]);
      write_tensor(w, params[i].name + ".v", params[i].shape, optimizer->second_moment[i]);
    }
  }
  return std::move(w.data());
}

RawCheckpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  const std::string magic = r.tag();
  if (magic != "ATRN") throw FormatError("checkpoint: bad magic '" + magic + "'");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  RawCheckpoint raw;
  raw.meta.step = r.u64();
  raw.meta.phase = r.u8();
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    StoredTensor t;
    t.name = r.str(r.u16());
    const std::uint8_t dtype = r.u8();
    if (dtype != 0) {
      throw FormatError("checkpoint: tensor '" + t.name + "' has unsupported dtype " +
                        std::to_string(dtype));
    }
    const std::uint8_t rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(r.u32());
    const std::size_t n = shape_numel(t.shape);
    r.need(n * 4);
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.data[i] = r.f32();
    raw.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after the last tensor");
  return raw;
}

LoadedCheckpoint restore_checkpoint(const RawCheckpoint& raw, const ModelConfig& config) {
  LoadedCheckpoint out{raw.meta, Model<float>::create(config, 0), {}, false};
  auto& params = out.model.params;

  std::map<std::string, const StoredTensor*> stored;
  for (const auto& t : raw.tensors) stored[t.name] = &t;

  std::vector<std::string> problems;
  std::size_t moments = 0;
  for (const auto& p : params) {
    for (const std::string& name : {p.name, p.name + ".m", p.name + ".v"}) {
      auto it = stored.find(name);
      const bool is_moment = name.size() != p.name.size();
      if (it == stored.end()) {
        if (!is_moment) problems.push_back("missing tensor '" + name + "'");
        continue;
      }
      if (it->second->shape != p.shape) {
        problems.push_back("tensor '" + name + "' has shape " + shape_string(it->second->shape) +
                           ", expected " + shape_string(p.shape));
      }
      moments += is_moment ? 1 : 0;
    }
  }
  for (const auto& t : raw.tensors) {
    std::string base = t.name;
    if (base.size() > 2 && (base.ends_with(".m") || base.ends_with(".v"))) {
      base.resize(base.size() - 2);
    }
    if (!params.contains(t.name) && !params.contains(base)) {
      problems.push_back("unexpected tensor '" + t.name + "'");
    }
  }
  if (moments != 0 && moments != 2 * params.size()) {
    problems.push_back("optimizer moments present for only some parameters");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the model configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IncompatibilityError(msg);
  }

  auto fill = [](Mat<float>& dst, const StoredTensor& src) {
    std::copy(src.data.begin(), src.data.end(), dst.data());
  };
  out.optimizer = AdamState<float>::zeros_like(params);
  out.has_optimizer = moments != 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    fill(params[i].value, *stored.at(params[i].name));
    if (out.has_optimizer) {
      fill(out.optimizer.first_moment[i], *stored.at(params[i].name + ".m"));
      fill(out.optimizer.second_moment[i], *stored.at(params[i].name + ".v"));
    }
  }
  out.optimizer.step_count = raw.meta.step;
  return out;
}

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".config");
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const AdamState<float>* optimizer, CheckpointMeta meta) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  // Write-then-rename so an interrupted save never leaves a torn file.
  const std::filesystem::path tmp(path.string() + ".tmp");
  dsp::write_file_bytes(tmp, encode_checkpoint(model.params, optimizer, meta));
  std::string cfg;
  for (const auto& [k, v] : model.config.to_map()) cfg += k + " = " + v + "\n";
  dsp::write_file_bytes(config_sidecar(path), std::vector<unsigned char>(cfg.begin(), cfg.end()));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

ModelConfig parse_model_config(const std::string& text, const std::string& source) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    if (!c.apply(key, detail::trim(line.substr(eq + 1)))) {
      throw ConfigError(where + "unknown model key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto sidecar = config_sidecar(path);
  const auto bytes = dsp::read_file_bytes(sidecar);
  return load_checkpoint(path, parse_model_config(std::string(bytes.begin(), bytes.end()),
                                                  sidecar.string()));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  return restore_checkpoint(decode_checkpoint(dsp::read_file_bytes(path)), config);
}

}  // namespace attentron

namespace attentron {

Model<float> select_parameters(const Model<float>& source, const ModelConfig& config) {
  Model<float> out = Model<float>::create(config, 0);
  std::vector<std::string> problems;
  for (auto& p : out.params) {
    if (!source.params.contains(p.name)) {
      problems.push_back("missing tensor '" + p.name + "'");
      continue;
    }
    const auto& src = source.params.at(p.name);
    if (src.shape != p.shape) {
      problems.push_back("tensor '" + p.name + "' has shape " + shape_string(src.shape) +
                         ", expected " + shape_string(p.shape));
      continue;
    }
    p.value = src.value;
  }
  if (!problems.empty()) {
    std::string msg = "trained model cannot provide the requested configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IncompatibilityError(msg);
  }
  return out;
}

}  // namespace attentron
