#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "attentron/autograd.hpp"

namespace attentron {

/// How the fine-grained encoder turns references into a decoder context.
enum class FineMode {
  attention,       // per-step scaled dot-product attention (default)
  average_pool,    // mean of all value rows, query-independent
  self_attention,  // one learned query, fixed embedding
  none,            // zero context ("w/o FE")
};

/// Where attention values come from.
enum class ValuePath {
  raw_fc,   // one fully-connected layer over raw spectrogram frames
  encoded,  // conv x2 + biLSTM x2, then the projection
};

std::string to_string(FineMode m);
std::string to_string(ValuePath v);
FineMode parse_fine_mode(std::string_view s);
ValuePath parse_value_path(std::string_view s);

/// Architecture hyperparameters. Defaults are the full-size configuration.
struct ModelConfig {
  int n_mels = 80;
  int d_char = 512;         // character embedding width
  int conv_channels = 512;  // every encoder conv layer
  int kernel_size = 3;
  int lstm_cells = 256;     // per direction
  int d_m = 256;            // attention key/query width
  int d_v = 256;            // variable-length embedding width
  int d_g = 256;            // global embedding width
  int prenet_dim = 256;
  double prenet_dropout = 0.5;
  int d_dec = 512;          // decoder LSTM width
  int d_text_attn = 128;    // text attention key/query width
  FineMode fine_mode = FineMode::attention;
  ValuePath value_path = ValuePath::raw_fc;
  bool coarse = true;

  int d_r() const { return 2 * lstm_cells; }
  int d_text() const { return 2 * lstm_cells + d_g; }
  int d_head_in() const { return d_dec + d_v + d_text(); }

  /// Throws ConfigError on non-positive widths or an even kernel.
  void validate() const;

  static ModelConfig full();
  /// Every width `width` (LSTM cells width/2 so d_r == width).
  static ModelConfig uniform(int width);

  /// key = value pairs, usable as a config-file fragment.
  std::map<std::string, std::string> to_map() const;
  /// Applies one key; returns false if the key is not a model key.
  bool apply(const std::string& key, const std::string& value);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

using HyperParams = ModelConfig;

/// Lowercase letters, digits, space, apostrophe, comma, period, hyphen.
std::string_view alphabet();
int alphabet_size();

/// Lowercases and trims; every remaining character must be in the alphabet.
/// Throws InputError for empty text or unknown characters (with position).
std::vector<int> text_to_ids(std::string_view text);

template <typename T>
struct Model {
  ModelConfig config;
  ParameterSet<T> params;

  /// Xavier-uniform weights, zero biases, forget-gate bias 1.
  static Model create(const ModelConfig& config, std::uint64_t seed);

  template <typename U>
  Model<U> cast() const {
    return Model<U>{config, params.template cast<U>()};
  }
};

extern template struct Model<float>;
extern template struct Model<double>;

namespace detail {

struct ConvStackNames {
  std::string w1, b1, w2, b2;
};
ConvStackNames conv_stack_names(const std::string& prefix);

struct LstmNames {
  std::string w_ih, w_hh, b;
};
LstmNames lstm_names(const std::string& prefix);

template <typename T>
LstmWeights lstm_vars(Tape<T>& t, const std::string& prefix);

/// conv(relu) x2 over [time, ch_in].
template <typename T>
Var conv_stack(Tape<T>& t, const ModelConfig& cfg, const std::string& prefix, Var x);

/// conv(relu) x2 -> biLSTM x2 : [time, n_mels] -> [time, d_r].
template <typename T>
Var conv_lstm_stack(Tape<T>& t, const ModelConfig& cfg, const std::string& prefix,
                    Var x);

}  // namespace detail

}  // namespace attentron
