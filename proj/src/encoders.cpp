#include "attentron/encoders.hpp"

#include <cmath>

namespace attentron {

template <typename T>
Mask ReferenceBatch<T>::mask() const {
  const std::size_t len = max_length();
  Mask m(count() * len, 0);
  for (std::size_t i = 0; i < count(); ++i) {
    for (std::size_t f = 0; f < valid_lengths[i]; ++f) m[i * len + f] = 1;
  }
  return m;
}

template <typename T>
Mat<T> ReferenceBatch<T>::reference(std::size_t i) const {
  const std::size_t len = max_length();
  const auto bins = static_cast<Eigen::Index>(spectrograms.dim(2));
  Eigen::Map<const Mat<T>> all(spectrograms.data().data(),
                               static_cast<Eigen::Index>(count() * len), bins);
  return all.middleRows(static_cast<Eigen::Index>(i * len),
                        static_cast<Eigen::Index>(valid_lengths.at(i)));
}

template <typename T>
ReferenceBatch<T> make_reference_batch(std::span<const Mat<T>> refs) {
  if (refs.empty()) throw AttentionError("reference set is empty");
  std::size_t len = 0;
  const Eigen::Index bins = refs[0].cols();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].rows() == 0) {
      throw AttentionError("reference " + std::to_string(i) + " has no frames");
    }
    if (refs[i].cols() != bins) {
      throw DimensionError("reference " + std::to_string(i) + " has " +
                           std::to_string(refs[i].cols()) + " bins, expected " +
                           std::to_string(bins));
    }
    len = std::max(len, static_cast<std::size_t>(refs[i].rows()));
  }
  ReferenceBatch<T> b;
  b.spectrograms = Tensor<T>({refs.size(), len, static_cast<std::size_t>(bins)});
  Eigen::Map<Mat<T>> all(b.spectrograms.data().data(),
                         static_cast<Eigen::Index>(refs.size() * len), bins);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    all.middleRows(static_cast<Eigen::Index>(i * len), refs[i].rows()) = refs[i];
    b.valid_lengths.push_back(static_cast<std::size_t>(refs[i].rows()));
  }
  return b;
}

template <typename T>
ReferenceBatch<T> make_reference_batch(std::span<const dsp::MelSpectrogram> refs) {
  std::vector<Mat<T>> mats;
  mats.reserve(refs.size());
  for (const auto& r : refs) mats.push_back(r.frames.cast<T>());
  return make_reference_batch<T>(std::span<const Mat<T>>(mats));
}

template <typename T>
ReferenceEncodingVars encode_references(Tape<T>& t, const Model<T>& m,
                                        const ReferenceBatch<T>& refs) {
  const ModelConfig& c = m.config;
  if (refs.count() == 0) throw AttentionError("reference set is empty");
  for (std::size_t i = 0; i < refs.count(); ++i) {
    if (refs.valid_lengths[i] == 0) {
      throw AttentionError("reference " + std::to_string(i) + " has no frames");
    }
  }
  if (refs.spectrograms.dim(2) != static_cast<std::size_t>(c.n_mels)) {
    throw DimensionError("references have " + std::to_string(refs.spectrograms.dim(2)) +
                         " mel bins, model expects " + std::to_string(c.n_mels));
  }

  ReferenceEncodingVars enc;
  enc.mask = refs.mask();
  enc.n_refs = refs.count();
  enc.max_length = refs.max_length();
  if (c.fine_mode == FineMode::none) return enc;

  const auto len = static_cast<Eigen::Index>(enc.max_length);
  const bool need_keys =
      c.fine_mode == FineMode::attention || c.fine_mode == FineMode::self_attention;
  std::vector<Var> z_parts;
  std::vector<Var> v_parts;
  for (std::size_t i = 0; i < refs.count(); ++i) {
    const Var s = t.constant(refs.reference(i));
    if (need_keys) {
      z_parts.push_back(nn::pad_rows(t, detail::conv_lstm_stack(t, c, "fine.ref", s), len));
    }
    Var v;
    if (c.value_path == ValuePath::raw_fc) {
      v = nn::linear(t, s, t.param("fine.value.w"), t.param("fine.value.b"));
    } else {
      const Var encoded = detail::conv_lstm_stack(t, c, "fine.venc", s);
      v = nn::linear(t, encoded, t.param("fine.value.w"), t.param("fine.value.b"));
    }
    v_parts.push_back(nn::pad_rows(t, v, len));
  }
  enc.values = nn::vstack<T>(t, v_parts);
  if (need_keys) {
    enc.intermediate = nn::vstack<T>(t, z_parts);
    enc.keys = nn::matmul(t, enc.intermediate, t.param("fine.w_k"));
  }
  return enc;
}

template <typename T>
Var attention_logits(Tape<T>& t, Var queries, Var keys, int d_m) {
  return nn::scale(t, nn::matmul_nt(t, queries, keys),
                   static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_m))));
}

template <typename T>
ContextVars attend(Tape<T>& t, const Model<T>& m, Var query_states,
                   const ReferenceEncodingVars& enc) {
  if (!enc.keys.valid() || !enc.values.valid()) {
    throw ConfigError("attend: reference encoding has no keys/values for mode " +
                      to_string(m.config.fine_mode));
  }
  const Var q = nn::matmul(t, query_states, t.param("fine.w_q"));
  const Var logits = attention_logits(t, q, enc.keys, m.config.d_m);
  ContextVars out;
  out.weights = nn::masked_softmax(t, logits, enc.mask);
  out.context = nn::matmul(t, out.weights, enc.values);
  return out;
}

template <typename T>
ContextVars fine_context(Tape<T>& t, const Model<T>& m, Var query_states,
                         const ReferenceEncodingVars& enc) {
  const ModelConfig& c = m.config;
  const Eigen::Index rows = t.value(query_states).rows();
  switch (c.fine_mode) {
    case FineMode::attention:
      return attend(t, m, query_states, enc);
    case FineMode::none:
      return {t.constant(Mat<T>::Zero(rows, c.d_v)), Var{}};
    case FineMode::average_pool: {
      std::size_t valid = 0;
      for (auto v : enc.mask) valid += v;
      if (valid == 0) throw AttentionError("average pool over an empty reference set");
      Mat<T> w = Mat<T>::Zero(1, static_cast<Eigen::Index>(enc.mask.size()));
      for (std::size_t i = 0; i < enc.mask.size(); ++i) {
        if (enc.mask[i]) w(0, static_cast<Eigen::Index>(i)) = T(1) / static_cast<T>(valid);
      }
      const Var pooled = nn::matmul(t, t.constant(std::move(w)), enc.values);
      return {nn::broadcast_rows(t, pooled, rows), Var{}};
    }
    case FineMode::self_attention: {
      const Var logits = attention_logits(t, t.param("fine.sa_query"), enc.keys, c.d_m);
      const Var w = nn::masked_softmax(t, logits, enc.mask);
      const Var ctx = nn::matmul(t, w, enc.values);
      return {nn::broadcast_rows(t, ctx, rows), nn::broadcast_rows(t, w, rows)};
    }
  }
  throw ConfigError("unknown fine-grained mode");
}

template <typename T>
Var coarse_pool(Tape<T>& t, const Model<T>& m, Var mel) {
  if (t.value(mel).rows() == 0) throw LengthError("coarse encoder: empty spectrogram");
  if (!m.config.coarse) {
    throw ConfigError("coarse encoder is disabled in this model");
  }
  return nn::mean_rows(t, detail::conv_lstm_stack(t, m.config, "coarse", mel));
}

template <typename T>
Var coarse_embed(Tape<T>& t, const Model<T>& m, Var mel) {
  if (t.value(mel).rows() == 0) throw LengthError("coarse encoder: empty spectrogram");
  if (!m.config.coarse) return t.constant(Mat<T>::Zero(1, m.config.d_g));
  return nn::linear(t, coarse_pool(t, m, mel), t.param("coarse.proj.w"),
                    t.param("coarse.proj.b"));
}

template <typename T>
Var coarse_embed_multi(Tape<T>& t, const Model<T>& m, std::span<const Var> mels) {
  if (mels.empty()) throw AttentionError("coarse encoder: no references");
  std::vector<Var> embeddings;
  for (Var mel : mels) embeddings.push_back(coarse_embed(t, m, mel));
  if (embeddings.size() == 1) return embeddings[0];
  return nn::mean_rows(t, nn::vstack<T>(t, embeddings));
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> unflatten(const Mat<T>& m, std::size_t n, std::size_t len) {
  std::vector<T> data(m.data(), m.data() + m.size());
  return Tensor<T>({n, len, static_cast<std::size_t>(m.cols())}, std::move(data));
}

}  // namespace

template <typename T>
ReferenceEncoding<T> encode_references(const Model<T>& m, const ReferenceBatch<T>& refs) {
  Tape<T> t(&m.params);
  const ReferenceEncodingVars v = encode_references(t, m, refs);
  ReferenceEncoding<T> out;
  out.mask = v.mask;
  if (v.keys.valid()) out.keys = unflatten(t.value(v.keys), v.n_refs, v.max_length);
  if (v.values.valid()) out.values = unflatten(t.value(v.values), v.n_refs, v.max_length);
  if (v.intermediate.valid()) {
    out.intermediate = unflatten(t.value(v.intermediate), v.n_refs, v.max_length);
  }
  return out;
}

template <typename T>
AttendResult<T> attend(const Model<T>& m, const Mat<T>& query_state,
                       const ReferenceBatch<T>& refs) {
  Tape<T> t(&m.params);
  const ReferenceEncodingVars enc = encode_references(t, m, refs);
  const ContextVars ctx = fine_context(t, m, t.constant(query_state), enc);
  AttendResult<T> out;
  out.context = t.value(ctx.context);
  if (ctx.weights.valid()) out.weights = t.value(ctx.weights);
  return out;
}

template <typename T>
Mat<T> coarse_embed(const Model<T>& m, const Mat<T>& mel) {
  Tape<T> t(&m.params);
  return t.value(coarse_embed(t, m, t.constant(mel)));
}

template <typename T>
Mat<T> coarse_embed_multi(const Model<T>& m, std::span<const Mat<T>> mels) {
  Tape<T> t(&m.params);
  std::vector<Var> vars;
  for (const auto& mel : mels) vars.push_back(t.constant(mel));
  return t.value(coarse_embed_multi<T>(t, m, vars));
}

#define ATTENTRON_INSTANTIATE_ENCODERS(T)                                              \
  template struct ReferenceBatch<T>;                                                 \
  template ReferenceBatch<T> make_reference_batch<T>(std::span<const Mat<T>>);       \
  template ReferenceBatch<T> make_reference_batch<T>(std::span<const dsp::MelSpectrogram>); \
  template ReferenceEncodingVars encode_references<T>(Tape<T>&, const Model<T>&,     \
                                                      const ReferenceBatch<T>&);     \
  template Var attention_logits<T>(Tape<T>&, Var, Var, int);                         \
  template ContextVars attend<T>(Tape<T>&, const Model<T>&, Var,                     \
                                 const ReferenceEncodingVars&);                      \
  template ContextVars fine_context<T>(Tape<T>&, const Model<T>&, Var,               \
                                       const ReferenceEncodingVars&);                \
  template Var coarse_pool<T>(Tape<T>&, const Model<T>&, Var);                       \
  template Var coarse_embed<T>(Tape<T>&, const Model<T>&, Var);                      \
  template Var coarse_embed_multi<T>(Tape<T>&, const Model<T>&, std::span<const Var>); \
  template ReferenceEncoding<T> encode_references<T>(const Model<T>&,                \
                                                     const ReferenceBatch<T>&);      \
  template AttendResult<T> attend<T>(const Model<T>&, const Mat<T>&,                 \
                                     const ReferenceBatch<T>&);                      \
  template Mat<T> coarse_embed<T>(const Model<T>&, const Mat<T>&);                   \
  template Mat<T> coarse_embed_multi<T>(const Model<T>&, std::span<const Mat<T>>);

ATTENTRON_INSTANTIATE_ENCODERS(float)
ATTENTRON_INSTANTIATE_ENCODERS(double)

}  // namespace attentron
