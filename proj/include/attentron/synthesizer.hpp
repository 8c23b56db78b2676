#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attentron/encoders.hpp"

namespace attentron {

inline constexpr double kStopThreshold = 0.5;

/// Character encodings with the global embedding broadcast onto every row,
/// plus the text-attention keys derived from them.
struct TextEncodingVars {
  Var frames;  // [L_t, 2*lstm_cells + d_g]
  Var keys;    // [L_t, d_text_attn]
};

struct DecoderStateVars {
  Var hidden;      // z_h, [1, d_dec]
  Var cell;        // [1, d_dec]
  Var prev_frame;  // [1, n_mels]
  int step = 0;
};

struct StepVars {
  Var mel_frame;     // [1, n_mels]
  Var stop_logit;    // [1, 1]
  Var text_weights;  // [1, L_t]
  Var ref_weights;   // [1, N*L_r] or invalid
  DecoderStateVars next;
};

struct ForwardOptions {
  bool training = false;  // enables prenet dropout
  std::uint64_t dropout_seed = 0;
};

template <typename T>
TextEncodingVars encode_text(Tape<T>& t, const Model<T>& m, const std::vector<int>& ids,
                             Var global_embedding);

template <typename T>
DecoderStateVars initial_decoder_state(Tape<T>& t, const Model<T>& m);

/// One decoder step: prenet on the previous frame, content-based text
/// attention from the previous hidden state, decoder LSTM, fine-grained
/// reference context from the new hidden state, then mel and stop heads on
/// [z_h, e_v, text_context].
template <typename T>
StepVars decode_step(Tape<T>& t, const Model<T>& m, const DecoderStateVars& state,
                     const TextEncodingVars& text, const ReferenceEncodingVars& refs,
                     const ForwardOptions& opts = {});

struct TeacherForcedVars {
  Var mel;          // [L, n_mels]
  Var stop_logits;  // [L, 1]
  Var text_weights; // [L, L_t]
  Var ref_weights;  // [L, N*L_r] or invalid
};

/// Teacher-forced decoding: the previous-frame input at step j is target
/// frame j-1 (zeros at j = 0). `global_embedding` is normally
/// coarse_embed(target).
template <typename T>
TeacherForcedVars forward_teacher_forced(Tape<T>& t, const Model<T>& m,
                                         const std::vector<int>& ids, const Mat<T>& target,
                                         const ReferenceBatch<T>& refs,
                                         Var global_embedding,
                                         const ForwardOptions& opts = {});

/// MSE over mel frames + BCE of the stop logits against 1 at the final
/// frame and 0 elsewhere, weighted 1:1.
template <typename T>
Var reconstruction_loss(Tape<T>& t, Var pred_mel, Var stop_logits, const Mat<T>& target);

/// Stop targets for a sequence of `frames` frames: [frames, 1].
template <typename T>
Mat<T> stop_targets(Eigen::Index frames);

/// Same loss on probabilities (clamped away from 0 and 1).
double compute_loss(const Mat<double>& pred_mel, const Mat<double>& target_mel,
                    std::span<const double> stop_probs);

/// One training example: text, target spectrogram and same-speaker references.
template <typename T>
struct Example {
  std::vector<int> text_ids;
  Mat<T> target;
  std::vector<Mat<T>> references;
};

/// Teacher-forced loss with e_g taken from the target; adds parameter
/// gradients into `grads` when non-null.
template <typename T>
double example_loss(const Model<T>& m, const Example<T>& ex, const ForwardOptions& opts,
                    Gradients<T>* grads);

/// Value-level teacher-forced forward.
template <typename T>
struct TeacherForcedOutput {
  Mat<T> mel;
  std::vector<double> stop_probs;
};

template <typename T>
TeacherForcedOutput<T> forward_teacher_forced(const Model<T>& m, const std::string& text,
                                              const Mat<T>& target,
                                              std::span<const Mat<T>> refs);

enum class Termination { stop_token, frame_cap };
std::string to_string(Termination t);

struct SynthesisResult {
  dsp::MelSpectrogram mel;       // [L_v, n_mels]
  std::vector<double> stop_probs;
  Mat<double> text_attention;    // [L_v, L_t]
  Mat<double> ref_attention;     // [L_v, N*L_r]; empty for query-free modes
  Mask ref_mask;
  Termination terminated_by = Termination::frame_cap;
  std::size_t text_length = 0;
};

/// Default frame cap: 10 frames per input character.
std::size_t default_max_frames(std::size_t text_length);

/// Autoregressive inference. e_g is the mean coarse embedding of the
/// references; decoding stops when the stop probability exceeds 0.5 or after
/// `max_frames` steps (0 selects the default cap).
template <typename T>
SynthesisResult synthesize(const Model<T>& m, const std::string& text,
                           std::span<const dsp::MelSpectrogram> refs,
                           std::size_t max_frames = 0);

}  // namespace attentron
