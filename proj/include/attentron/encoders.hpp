#pragma once

#include <span>
#include <vector>

#include "attentron/dsp.hpp"
#include "attentron/model.hpp"

namespace attentron {

/// N reference spectrograms zero-padded to the longest one.
template <typename T>
struct ReferenceBatch {
  Tensor<T> spectrograms;  // [N, L_r, n_mels]
  std::vector<std::size_t> valid_lengths;

  std::size_t count() const { return valid_lengths.size(); }
  std::size_t max_length() const {
    return spectrograms.rank() == 3 ? spectrograms.dim(1) : 0;
  }
  /// Flattened [N * L_r] mask; true iff frame t of reference i is real.
  Mask mask() const;
  /// Unpadded frames of reference i.
  Mat<T> reference(std::size_t i) const;
};

/// Throws AttentionError on an empty list or an empty reference.
template <typename T>
ReferenceBatch<T> make_reference_batch(std::span<const Mat<T>> refs);
template <typename T>
ReferenceBatch<T> make_reference_batch(std::span<const dsp::MelSpectrogram> refs);

/// Keys, values and intermediate encodings of all references, flattened to
/// N * L_r rows. Invalid Vars mean the active mode does not need them.
struct ReferenceEncodingVars {
  Var keys;          // [N*L_r, d_m]
  Var values;        // [N*L_r, d_v]
  Var intermediate;  // [N*L_r, d_r]
  Mask mask;
  std::size_t n_refs = 0;
  std::size_t max_length = 0;
};

/// Each reference is encoded on its own (conv x2 -> biLSTM x2 -> W_k for
/// keys; one fully-connected layer over raw frames for values, or the
/// encoded value stack), then padded.
template <typename T>
ReferenceEncodingVars encode_references(Tape<T>& t, const Model<T>& m,
                                        const ReferenceBatch<T>& refs);

struct ContextVars {
  Var context;  // [rows, d_v]
  Var weights;  // [rows, N*L_r]; invalid for query-free modes
};

/// Q K^T / sqrt(d_m).
template <typename T>
Var attention_logits(Tape<T>& t, Var queries, Var keys, int d_m);

/// Scaled dot-product attention of decoder states [rows, d_dec] over every
/// unmasked reference frame.
template <typename T>
ContextVars attend(Tape<T>& t, const Model<T>& m, Var query_states,
                   const ReferenceEncodingVars& enc);

/// Dispatches on the configured FineMode.
template <typename T>
ContextVars fine_context(Tape<T>& t, const Model<T>& m, Var query_states,
                         const ReferenceEncodingVars& enc);

/// Temporal mean of the coarse encoder's final biLSTM outputs, [1, d_r].
template <typename T>
Var coarse_pool(Tape<T>& t, const Model<T>& m, Var mel);

/// Global embedding [1, d_g]; zeros when the coarse encoder is disabled.
template <typename T>
Var coarse_embed(Tape<T>& t, const Model<T>& m, Var mel);

/// Arithmetic mean of coarse_embed over the references.
template <typename T>
Var coarse_embed_multi(Tape<T>& t, const Model<T>& m, std::span<const Var> mels);

// --- value-level wrappers (no gradients) -----------------------------------

template <typename T>
struct ReferenceEncoding {
  Tensor<T> keys;          // [N, L_r, d_m]
  Tensor<T> values;        // [N, L_r, d_v]
  Tensor<T> intermediate;  // [N, L_r, d_r]
  Mask mask;               // [N * L_r]
};

template <typename T>
ReferenceEncoding<T> encode_references(const Model<T>& m, const ReferenceBatch<T>& refs);

template <typename T>
struct AttendResult {
  Mat<T> context;  // [1, d_v]
  Mat<T> weights;  // [1, N*L_r]; empty for query-free modes
};

template <typename T>
AttendResult<T> attend(const Model<T>& m, const Mat<T>& query_state,
                       const ReferenceBatch<T>& refs);

template <typename T>
Mat<T> coarse_embed(const Model<T>& m, const Mat<T>& mel);

template <typename T>
Mat<T> coarse_embed_multi(const Model<T>& m, std::span<const Mat<T>> mels);

}  // namespace attentron
