#include "attentron/synthesizer.hpp"

#include <algorithm>
#include <cmath>

#include "attentron/random.hpp"

namespace attentron {

namespace {

template <typename T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat<T> mask(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < p ? T(0) : keep_scale;
  }
  return mask;
}

/// Two ReLU layers over previous frames [rows, n_mels].
template <typename T>
Var prenet(Tape<T>& t, const Model<T>& m, Var frames, const ForwardOptions& opts,
           std::uint64_t stream) {
  const ModelConfig& c = m.config;
  const bool drop = opts.training && c.prenet_dropout > 0.0;
  Rng rng(derive_seed({opts.dropout_seed, stream}));
  Var h = nn::relu(t, nn::linear(t, frames, t.param("dec.prenet1.w"),
                                 t.param("dec.prenet1.b")));
  if (drop) {
    const Mat<T>& v = t.value(h);
    h = nn::mul_const(t, h, dropout_mask<T>(v.rows(), v.cols(), c.prenet_dropout, rng));
  }
  h = nn::relu(t, nn::linear(t, h, t.param("dec.prenet2.w"), t.param("dec.prenet2.b")));
  if (drop) {
    const Mat<T>& v = t.value(h);
    h = nn::mul_const(t, h, dropout_mask<T>(v.rows(), v.cols(), c.prenet_dropout, rng));
  }
  return h;
}

/// Content-based text attention from the previous decoder hidden state.
template <typename T>
std::pair<Var, Var> text_attention(Tape<T>& t, const Model<T>& m, Var hidden,
                                   const TextEncodingVars& text) {
  const Var q = nn::matmul(t, hidden, t.param("dec.attn.w_q"));
  const Var logits = attention_logits(t, q, text.keys, m.config.d_text_attn);
  const Mask all(static_cast<std::size_t>(t.value(text.keys).rows()), 1);
  const Var w = nn::masked_softmax(t, logits, all);
  return {nn::matmul(t, w, text.frames), w};
}

template <typename T>
std::pair<Var, Var> output_heads(Tape<T>& t, Var head_in) {
  return {nn::linear(t, head_in, t.param("dec.mel.w"), t.param("dec.mel.b")),
          nn::linear(t, head_in, t.param("dec.stop.w"), t.param("dec.stop.b"))};
}

template <typename T>
LstmWeights decoder_lstm(Tape<T>& t) {
  return detail::lstm_vars(t, "dec.lstm");
}

}  // namespace

template <typename T>
TextEncodingVars encode_text(Tape<T>& t, const Model<T>& m, const std::vector<int>& ids,
                             Var global_embedding) {
  if (ids.empty()) throw InputError("empty text");
  const ModelConfig& c = m.config;
  const Mat<T>& eg = t.value(global_embedding);
  if (eg.rows() != 1 || eg.cols() != c.d_g) {
    throw DimensionError("global embedding must be [1x" + std::to_string(c.d_g) +
                         "], got [" + std::to_string(eg.rows()) + "x" +
                         std::to_string(eg.cols()) + "]");
  }
  Var x = nn::embedding(t, t.param("text.embedding"), ids);
  x = detail::conv_stack(t, c, "text", x);
  x = nn::bilstm(t, x, detail::lstm_vars(t, "text.lstm.fw"),
                 detail::lstm_vars(t, "text.lstm.bw"));
  const Var tiled =
      nn::broadcast_rows(t, global_embedding, static_cast<Eigen::Index>(ids.size()));
  const Var parts[] = {x, tiled};
  TextEncodingVars out;
  out.frames = nn::concat_cols<T>(t, parts);
  out.keys = nn::matmul(t, out.frames, t.param("dec.attn.w_k"));
  return out;
}

template <typename T>
DecoderStateVars initial_decoder_state(Tape<T>& t, const Model<T>& m) {
  const ModelConfig& c = m.config;
  DecoderStateVars s;
  s.hidden = t.constant(Mat<T>::Zero(1, c.d_dec));
  s.cell = t.constant(Mat<T>::Zero(1, c.d_dec));
  s.prev_frame = t.constant(Mat<T>::Zero(1, c.n_mels));
  return s;
}

template <typename T>
StepVars decode_step(Tape<T>& t, const Model<T>& m, const DecoderStateVars& state,
                     const TextEncodingVars& text, const ReferenceEncodingVars& refs,
                     const ForwardOptions& opts) {
  const ModelConfig& c = m.config;
  const Var pre = prenet(t, m, state.prev_frame, opts, static_cast<std::uint64_t>(state.step));
  auto [text_ctx, text_w] = text_attention(t, m, state.hidden, text);
  const Var lstm_in_parts[] = {pre, text_ctx};
  const Var lstm_in = nn::concat_cols<T>(t, lstm_in_parts);
  const Var hc = nn::lstm_cell(t, lstm_in, state.hidden, state.cell, decoder_lstm(t));

  StepVars out;
  out.next.hidden = nn::slice_cols(t, hc, 0, c.d_dec);
  out.next.cell = nn::slice_cols(t, hc, c.d_dec, c.d_dec);
  const ContextVars fine = fine_context(t, m, out.next.hidden, refs);
  const Var head_parts[] = {out.next.hidden, fine.context, text_ctx};
  auto [mel, stop] = output_heads(t, nn::concat_cols<T>(t, head_parts));
  out.mel_frame = mel;
  out.stop_logit = stop;
  out.text_weights = text_w;
  out.ref_weights = fine.weights;
  out.next.prev_frame = mel;
  out.next.step = state.step + 1;
  return out;
}

template <typename T>
TeacherForcedVars forward_teacher_forced(Tape<T>& t, const Model<T>& m,
                                         const std::vector<int>& ids, const Mat<T>& target,
                                         const ReferenceBatch<T>& refs,
                                         Var global_embedding,
                                         const ForwardOptions& opts) {
  const ModelConfig& c = m.config;
  const Eigen::Index frames = target.rows();
  if (frames == 0) throw LengthError("teacher forcing: empty target");
  if (target.cols() != c.n_mels) {
    throw DimensionError("teacher forcing: target has " + std::to_string(target.cols()) +
                         " bins, model expects " + std::to_string(c.n_mels));
  }
  const TextEncodingVars text = encode_text(t, m, ids, global_embedding);
  const ReferenceEncodingVars enc = encode_references(t, m, refs);

  Mat<T> prev = Mat<T>::Zero(frames, c.n_mels);
  if (frames > 1) prev.bottomRows(frames - 1) = target.topRows(frames - 1);
  const Var pre = prenet(t, m, t.constant(std::move(prev)), opts, 0x7072656e6574ULL);

  const LstmWeights lw = decoder_lstm(t);
  Var h = t.constant(Mat<T>::Zero(1, c.d_dec));
  Var cell = t.constant(Mat<T>::Zero(1, c.d_dec));
  std::vector<Var> hs, ctxs, tws;
  hs.reserve(static_cast<std::size_t>(frames));
  ctxs.reserve(static_cast<std::size_t>(frames));
  tws.reserve(static_cast<std::size_t>(frames));
  for (Eigen::Index j = 0; j < frames; ++j) {
    auto [text_ctx, text_w] = text_attention(t, m, h, text);
    const Var parts[] = {nn::slice_rows(t, pre, j, 1), text_ctx};
    const Var hc = nn::lstm_cell(t, nn::concat_cols<T>(t, parts), h, cell, lw);
    h = nn::slice_cols(t, hc, 0, c.d_dec);
    cell = nn::slice_cols(t, hc, c.d_dec, c.d_dec);
    hs.push_back(h);
    ctxs.push_back(text_ctx);
    tws.push_back(text_w);
  }
  const Var z = nn::vstack<T>(t, hs);
  const Var text_ctx = nn::vstack<T>(t, ctxs);
  const ContextVars fine = fine_context(t, m, z, enc);
  const Var head_parts[] = {z, fine.context, text_ctx};
  auto [mel, stop] = output_heads(t, nn::concat_cols<T>(t, head_parts));
  return {mel, stop, nn::vstack<T>(t, tws), fine.weights};
}

template <typename T>
Mat<T> stop_targets(Eigen::Index frames) {
  Mat<T> y = Mat<T>::Zero(frames, 1);
  if (frames > 0) y(frames - 1, 0) = T(1);
  return y;
}

template <typename T>
Var reconstruction_loss(Tape<T>& t, Var pred_mel, Var stop_logits, const Mat<T>& target) {
  const Var mse = nn::mse(t, pred_mel, target);
  const Var bce = nn::bce_with_logits(t, stop_logits, stop_targets<T>(target.rows()));
  return nn::add(t, mse, bce);
}

double compute_loss(const Mat<double>& pred_mel, const Mat<double>& target_mel,
                    std::span<const double> stop_probs) {
  if (pred_mel.rows() != target_mel.rows() || pred_mel.cols() != target_mel.cols()) {
    throw DimensionError("compute_loss: prediction [" + std::to_string(pred_mel.rows()) +
                         "x" + std::to_string(pred_mel.cols()) + "] vs target [" +
                         std::to_string(target_mel.rows()) + "x" +
                         std::to_string(target_mel.cols()) + "]");
  }
  if (static_cast<Eigen::Index>(stop_probs.size()) != target_mel.rows()) {
    throw DimensionError("compute_loss: " + std::to_string(stop_probs.size()) +
                         " stop probabilities for " + std::to_string(target_mel.rows()) +
                         " frames");
  }
  if (target_mel.size() == 0) throw LengthError("compute_loss: empty target");
  const double mse = (pred_mel - target_mel).squaredNorm() / static_cast<double>(target_mel.size());
  constexpr double kEps = 1e-12;
  double bce = 0.0;
  for (std::size_t j = 0; j < stop_probs.size(); ++j) {
    const double p = std::clamp(stop_probs[j], kEps, 1.0 - kEps);
    const double y = j + 1 == stop_probs.size() ? 1.0 : 0.0;
    bce -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return mse + bce / static_cast<double>(stop_probs.size());
}

template <typename T>
double example_loss(const Model<T>& m, const Example<T>& ex, const ForwardOptions& opts,
                    Gradients<T>* grads) {
  Tape<T> t(&m.params, grads != nullptr);
  const ReferenceBatch<T> refs =
      make_reference_batch<T>(std::span<const Mat<T>>(ex.references));
  const Var eg = coarse_embed(t, m, t.constant(ex.target));
  const TeacherForcedVars out =
      forward_teacher_forced(t, m, ex.text_ids, ex.target, refs, eg, opts);
  const Var loss = reconstruction_loss(t, out.mel, out.stop_logits, ex.target);
  if (grads) {
    t.backward(loss);
    t.accumulate_param_grads(*grads);
  }
  return static_cast<double>(t.value(loss)(0, 0));
}

template <typename T>
TeacherForcedOutput<T> forward_teacher_forced(const Model<T>& m, const std::string& text,
                                              const Mat<T>& target,
                                              std::span<const Mat<T>> refs) {
  Tape<T> t(&m.params, false);
  const auto ids = text_to_ids(text);
  const ReferenceBatch<T> batch = make_reference_batch<T>(refs);
  const Var eg = coarse_embed(t, m, t.constant(target));
  const TeacherForcedVars out = forward_teacher_forced(t, m, ids, target, batch, eg);
  TeacherForcedOutput<T> r;
  r.mel = t.value(out.mel);
  const Mat<T>& logits = t.value(out.stop_logits);
  for (Eigen::Index j = 0; j < logits.rows(); ++j) {
    r.stop_probs.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(logits(j, 0)))));
  }
  return r;
}

std::string to_string(Termination t) {
  return t == Termination::stop_token ? "stop_token" : "frame_cap";
}

std::size_t default_max_frames(std::size_t text_length) { return 10 * text_length; }

template <typename T>
SynthesisResult synthesize(const Model<T>& m, const std::string& text,
                           std::span<const dsp::MelSpectrogram> refs,
                           std::size_t max_frames) {
  const std::vector<int> ids = text_to_ids(text);
  if (refs.empty()) throw AttentionError("synthesis needs at least one reference");
  if (max_frames == 0) max_frames = default_max_frames(ids.size());

  Tape<T> t(&m.params, false);
  const ReferenceBatch<T> batch = make_reference_batch<T>(refs);
  std::vector<Var> ref_vars;
  for (std::size_t i = 0; i < batch.count(); ++i) ref_vars.push_back(t.constant(batch.reference(i)));
  const Var eg = coarse_embed_multi<T>(t, m, ref_vars);
  const TextEncodingVars txt = encode_text(t, m, ids, eg);
  const ReferenceEncodingVars enc = encode_references(t, m, batch);

  SynthesisResult r;
  r.text_length = ids.size();
  r.ref_mask = enc.mask;
  std::vector<Mat<double>> frames, tws, rws;
  DecoderStateVars state = initial_decoder_state(t, m);
  for (std::size_t step = 0; step < max_frames; ++step) {
    const StepVars out = decode_step(t, m, state, txt, enc);
    frames.push_back(t.value(out.mel_frame).template cast<double>());
    tws.push_back(t.value(out.text_weights).template cast<double>());
    if (out.ref_weights.valid()) rws.push_back(t.value(out.ref_weights).template cast<double>());
    const double logit = static_cast<double>(t.value(out.stop_logit)(0, 0));
    const double p = 1.0 / (1.0 + std::exp(-logit));
    r.stop_probs.push_back(p);
    state = out.next;
    if (p > kStopThreshold) {
      r.terminated_by = Termination::stop_token;
      break;
    }
  }
  const auto steps = static_cast<Eigen::Index>(frames.size());
  r.mel.frames.resize(steps, m.config.n_mels);
  r.text_attention.resize(steps, static_cast<Eigen::Index>(ids.size()));
  for (Eigen::Index j = 0; j < steps; ++j) {
    r.mel.frames.row(j) = frames[j].row(0).cast<float>();
    r.text_attention.row(j) = tws[j].row(0);
  }
  if (!rws.empty()) {
    r.ref_attention.resize(steps, static_cast<Eigen::Index>(enc.mask.size()));
    for (Eigen::Index j = 0; j < steps; ++j) r.ref_attention.row(j) = rws[j].row(0);
  }
  return r;
}

#define ATTENTRON_INSTANTIATE_SYNTH(T)                                                    \
  template TextEncodingVars encode_text<T>(Tape<T>&, const Model<T>&,                   \
                                           const std::vector<int>&, Var);               \
  template DecoderStateVars initial_decoder_state<T>(Tape<T>&, const Model<T>&);        \
  template StepVars decode_step<T>(Tape<T>&, const Model<T>&, const DecoderStateVars&,  \
                                   const TextEncodingVars&, const ReferenceEncodingVars&, \
                                   const ForwardOptions&);                              \
  template TeacherForcedVars forward_teacher_forced<T>(                                 \
      Tape<T>&, const Model<T>&, const std::vector<int>&, const Mat<T>&,                \
      const ReferenceBatch<T>&, Var, const ForwardOptions&);                            \
  template Var reconstruction_loss<T>(Tape<T>&, Var, Var, const Mat<T>&);               \
  template Mat<T> stop_targets<T>(Eigen::Index);                                        \
  template double example_loss<T>(const Model<T>&, const Example<T>&,                   \
                                  const ForwardOptions&, Gradients<T>*);                \
  template TeacherForcedOutput<T> forward_teacher_forced<T>(                            \
      const Model<T>&, const std::string&, const Mat<T>&, std::span<const Mat<T>>);     \
  template SynthesisResult synthesize<T>(const Model<T>&, const std::string&,           \
                                         std::span<const dsp::MelSpectrogram>, std::size_t);

ATTENTRON_INSTANTIATE_SYNTH(float)
ATTENTRON_INSTANTIATE_SYNTH(double)

}  // namespace attentron
