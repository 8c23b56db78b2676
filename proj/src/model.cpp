#include "attentron/model.hpp"

#include <cctype>
#include <cmath>

#include "attentron/random.hpp"
#include "parse_util.hpp"

namespace attentron {

std::string to_string(FineMode m) {
  switch (m) {
    case FineMode::attention: return "attention";
    case FineMode::average_pool: return "average_pool";
    case FineMode::self_attention: return "self_attention";
    case FineMode::none: return "none";
  }
  return "?";
}

std::string to_string(ValuePath v) {
  return v == ValuePath::raw_fc ? "raw_fc" : "encoded";
}

FineMode parse_fine_mode(std::string_view s) {
  if (s == "attention") return FineMode::attention;
  if (s == "average_pool") return FineMode::average_pool;
  if (s == "self_attention") return FineMode::self_attention;
  if (s == "none") return FineMode::none;
  throw ConfigError("unknown fine-grained mode '" + std::string(s) +
                    "' (attention, average_pool, self_attention, none)");
}

ValuePath parse_value_path(std::string_view s) {
  if (s == "raw_fc") return ValuePath::raw_fc;
  if (s == "encoded") return ValuePath::encoded;
  throw ConfigError("unknown value path '" + std::string(s) + "' (raw_fc, encoded)");
}

void ModelConfig::validate() const {
  const std::pair<const char*, int> widths[] = {
      {"n_mels", n_mels},         {"d_char", d_char},     {"conv_channels", conv_channels},
      {"kernel_size", kernel_size}, {"lstm_cells", lstm_cells}, {"d_m", d_m},
      {"d_v", d_v},               {"d_g", d_g},           {"prenet_dim", prenet_dim},
      {"d_dec", d_dec},           {"d_text_attn", d_text_attn}};
  for (auto [name, v] : widths) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
  }
  if (kernel_size % 2 == 0) {
    throw ConfigError("kernel_size must be odd, got " + std::to_string(kernel_size));
  }
  if (!(prenet_dropout >= 0.0 && prenet_dropout < 1.0)) {
    throw ConfigError("prenet_dropout must be in [0, 1)");
  }
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::uniform(int width) {
  ModelConfig c;
  c.d_char = width;
  c.conv_channels = width;
  c.lstm_cells = std::max(1, width / 2);
  c.d_m = width;
  c.d_v = width;
  c.d_g = width;
  c.prenet_dim = width;
  c.d_dec = width;
  c.d_text_attn = width;
  return c;
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {
      {"n_mels", std::to_string(n_mels)},
      {"d_char", std::to_string(d_char)},
      {"conv_channels", std::to_string(conv_channels)},
      {"kernel_size", std::to_string(kernel_size)},
      {"lstm_cells", std::to_string(lstm_cells)},
      {"d_m", std::to_string(d_m)},
      {"d_v", std::to_string(d_v)},
      {"d_g", std::to_string(d_g)},
      {"prenet_dim", std::to_string(prenet_dim)},
      {"prenet_dropout", num(prenet_dropout)},
      {"d_dec", std::to_string(d_dec)},
      {"d_text_attn", std::to_string(d_text_attn)},
      {"fine_mode", to_string(fine_mode)},
      {"value_path", to_string(value_path)},
      {"coarse", coarse ? "on" : "off"},
  };
}

using detail::parse_double;
using detail::parse_int;

bool ModelConfig::apply(const std::string& key, const std::string& value) {
  int* ints[] = {&n_mels, &d_char, &conv_channels, &kernel_size, &lstm_cells, &d_m,
                 &d_v,    &d_g,    &prenet_dim,    &d_dec,       &d_text_attn};
  const char* names[] = {"n_mels", "d_char", "conv_channels", "kernel_size",
                         "lstm_cells", "d_m", "d_v", "d_g", "prenet_dim", "d_dec",
                         "d_text_attn"};
  for (std::size_t i = 0; i < std::size(names); ++i) {
    if (key == names[i]) {
      *ints[i] = parse_int(key, value);
      return true;
    }
  }
  if (key == "prenet_dropout") {
    prenet_dropout = parse_double(key, value);
  } else if (key == "fine_mode") {
    fine_mode = parse_fine_mode(value);
  } else if (key == "value_path") {
    value_path = parse_value_path(value);
  } else if (key == "coarse") {
    if (value != "on" && value != "off") {
      throw ConfigError("'coarse' expects on or off, got '" + value + "'");
    }
    coarse = value == "on";
  } else {
    return false;
  }
  return true;
}

std::string_view alphabet() {
  static constexpr std::string_view kAlphabet =
      "abcdefghijklmnopqrstuvwxyz0123456789 ',.-";
  return kAlphabet;
}

int alphabet_size() { return static_cast<int>(alphabet().size()); }

std::vector<int> text_to_ids(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  if (begin == end) throw InputError("empty text");
  std::vector<int> ids;
  ids.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
    const auto pos = alphabet().find(c);
    if (pos == std::string_view::npos) {
      throw InputError("unknown character '" + std::string(1, text[i]) +
                       "' at position " + std::to_string(i));
    }
    ids.push_back(static_cast<int>(pos));
  }
  return ids;
}

// ---------------------------------------------------------------------------

namespace detail {

ConvStackNames conv_stack_names(const std::string& prefix) {
  return {prefix + ".conv1.w", prefix + ".conv1.b", prefix + ".conv2.w",
          prefix + ".conv2.b"};
}

LstmNames lstm_names(const std::string& prefix) {
  return {prefix + ".w_ih", prefix + ".w_hh", prefix + ".b"};
}

template <typename T>
LstmWeights lstm_vars(Tape<T>& t, const std::string& prefix) {
  const LstmNames n = lstm_names(prefix);
  return {t.param(n.w_ih), t.param(n.w_hh), t.param(n.b)};
}

template <typename T>
Var conv_stack(Tape<T>& t, const ModelConfig& cfg, const std::string& prefix, Var x) {
  const ConvStackNames n = conv_stack_names(prefix);
  Var h = nn::relu(t, nn::conv1d(t, x, t.param(n.w1), t.param(n.b1), cfg.kernel_size));
  return nn::relu(t, nn::conv1d(t, h, t.param(n.w2), t.param(n.b2), cfg.kernel_size));
}

template <typename T>
Var conv_lstm_stack(Tape<T>& t, const ModelConfig& cfg, const std::string& prefix,
                    Var x) {
  Var h = conv_stack(t, cfg, prefix, x);
  h = nn::bilstm(t, h, lstm_vars(t, prefix + ".lstm1.fw"),
                 lstm_vars(t, prefix + ".lstm1.bw"));
  return nn::bilstm(t, h, lstm_vars(t, prefix + ".lstm2.fw"),
                    lstm_vars(t, prefix + ".lstm2.bw"));
}

template LstmWeights lstm_vars<float>(Tape<float>&, const std::string&);
template LstmWeights lstm_vars<double>(Tape<double>&, const std::string&);
template Var conv_stack<float>(Tape<float>&, const ModelConfig&, const std::string&, Var);
template Var conv_stack<double>(Tape<double>&, const ModelConfig&, const std::string&, Var);
template Var conv_lstm_stack<float>(Tape<float>&, const ModelConfig&, const std::string&,
                                    Var);
template Var conv_lstm_stack<double>(Tape<double>&, const ModelConfig&,
                                     const std::string&, Var);

}  // namespace detail

namespace {

template <typename T>
class Initializer {
 public:
  Initializer(ParameterSet<T>& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  void xavier(const std::string& name, Shape shape, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto [rows, cols] = parameter_matrix_dims(shape);
    Mat<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<T>(rng_.uniform(-limit, limit));
    }
    params_.add(name, std::move(shape), std::move(m));
  }

  void dense(const std::string& name, int in, int out) {
    xavier(name, {std::size_t(in), std::size_t(out)}, in, out);
  }

  void constant(const std::string& name, int n, double v) {
    params_.add(name, {std::size_t(n)}, Mat<T>::Constant(1, n, static_cast<T>(v)));
  }

  void linear(const std::string& prefix, int in, int out) {
    dense(prefix + ".w", in, out);
    constant(prefix + ".b", out, 0.0);
  }

  void conv(const std::string& w, const std::string& b, int k, int in, int out) {
    xavier(w, {std::size_t(k), std::size_t(in), std::size_t(out)}, double(k) * in,
           double(k) * out);
    constant(b, out, 0.0);
  }

  void conv_stack(const std::string& prefix, int k, int in, int channels) {
    const auto n = detail::conv_stack_names(prefix);
    conv(n.w1, n.b1, k, in, channels);
    conv(n.w2, n.b2, k, channels, channels);
  }

  void lstm(const std::string& prefix, int in, int cells) {
    const auto n = detail::lstm_names(prefix);
    dense(n.w_ih, in, 4 * cells);
    dense(n.w_hh, cells, 4 * cells);
    Mat<T> b = Mat<T>::Zero(1, 4 * cells);
    b.middleCols(cells, cells).setConstant(T(1));
    params_.add(n.b, {std::size_t(4 * cells)}, std::move(b));
  }

  void bilstm(const std::string& prefix, int in, int cells) {
    lstm(prefix + ".fw", in, cells);
    lstm(prefix + ".bw", in, cells);
  }

  void conv_lstm_stack(const std::string& prefix, const ModelConfig& c, int in) {
    conv_stack(prefix, c.kernel_size, in, c.conv_channels);
    bilstm(prefix + ".lstm1", c.conv_channels, c.lstm_cells);
    bilstm(prefix + ".lstm2", c.d_r(), c.lstm_cells);
  }

 private:
  ParameterSet<T>& params_;
  Rng rng_;
};

}  // namespace

template <typename T>
Model<T> Model<T>::create(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Model<T> m;
  m.config = c;
  Initializer<T> init(m.params, seed);

  init.xavier("text.embedding", {std::size_t(alphabet_size()), std::size_t(c.d_char)},
              alphabet_size(), c.d_char);
  init.conv_stack("text", c.kernel_size, c.d_char, c.conv_channels);
  init.bilstm("text.lstm", c.conv_channels, c.lstm_cells);

  if (c.coarse) {
    init.conv_lstm_stack("coarse", c, c.n_mels);
    init.linear("coarse.proj", c.d_r(), c.d_g);
  }

  const bool keys = c.fine_mode == FineMode::attention ||
                    c.fine_mode == FineMode::self_attention;
  if (keys) {
    init.conv_lstm_stack("fine.ref", c, c.n_mels);
    init.dense("fine.w_k", c.d_r(), c.d_m);
  }
  if (c.fine_mode == FineMode::attention) init.dense("fine.w_q", c.d_dec, c.d_m);
  if (c.fine_mode == FineMode::self_attention) {
    init.xavier("fine.sa_query", {std::size_t(c.d_m)}, 1, c.d_m);
  }
  if (c.fine_mode != FineMode::none) {
    if (c.value_path == ValuePath::raw_fc) {
      init.linear("fine.value", c.n_mels, c.d_v);
    } else {
      init.conv_lstm_stack("fine.venc", c, c.n_mels);
      init.linear("fine.value", c.d_r(), c.d_v);
    }
  }

  init.linear("dec.prenet1", c.n_mels, c.prenet_dim);
  init.linear("dec.prenet2", c.prenet_dim, c.prenet_dim);
  init.dense("dec.attn.w_q", c.d_dec, c.d_text_attn);
  init.dense("dec.attn.w_k", c.d_text(), c.d_text_attn);
  init.lstm("dec.lstm", c.prenet_dim + c.d_text(), c.d_dec);
  init.linear("dec.mel", c.d_head_in(), c.n_mels);
  init.linear("dec.stop", c.d_head_in(), 1);
  return m;
}

template struct Model<float>;
template struct Model<double>;

}  // namespace attentron
