#pragma once

#include <optional>

#include "tsinet/ops.hpp"

namespace tsinet {

/// A convolution bound to a tape: kernel [Cout,Cin,k,k] with optional bias,
/// applied with stride 1 and same-padding.
template <typename T>
struct ConvLayer {
  Var<T> kernel;
  std::optional<Var<T>> bias;

  Var<T> operator()(const Var<T>& x) const {
    const int pad = static_cast<int>((kernel.shape()[2] - 1) / 2);
    return conv2d(x, kernel, bias, 1, pad);
  }
};

/// The six learned convolutions of a ConvGRU cell. `*_x` act on the frame
/// feature (input-to-state), `*_h` on the previous hidden state (state-to-state).
/// One instance serves every time step of a scan direction.
template <typename T>
struct ConvGRUWeights {
  ConvLayer<T> update_x, update_h;
  ConvLayer<T> reset_x, reset_h;
  ConvLayer<T> cand_x, cand_h;
};

/// Two untied ConvGRU cells plus the fusion convolutions of the bidirectional module.
template <typename T>
struct BCMWeights {
  ConvGRUWeights<T> forward;
  ConvGRUWeights<T> backward;
  ConvLayer<T> fuse_f, fuse_b;
};

template <typename T>
struct CellState {
  Var<T> hidden;
  Var<T> update_gate;
  Var<T> reset_gate;
};

/// Frames are stacked on the leading axis: a length-T sequence of [C,H,W]
/// maps is one [T,C,H,W] tensor.
template <typename T>
struct SequenceOutput {
  Var<T> outputs;  // [T,C,H,W]
  Var<T> final;    // [1,C,H,W], the last time step
};

/// One ConvGRU update:
///   U = sigmoid(Wu*f + Wu'*h),  R = sigmoid(Wr*f + Wr'*h),
///   cand = tanh(W*f + R o (W'*h)),  h_new = (1-U) o cand + U o h.
template <typename T>
Var<T> convgru_cell_step(const Var<T>& frame, const Var<T>& h_prev, const ConvGRUWeights<T>& w);

/// Same as convgru_cell_step but also exposes the gate activations.
template <typename T>
CellState<T> convgru_cell_detailed(const Var<T>& frame, const Var<T>& h_prev, const ConvGRUWeights<T>& w);

/// Unidirectional scan over frames [T,C,H,W]; h0 defaults to zeros.
template <typename T>
SequenceOutput<T> ucm_forward(const Var<T>& frames, const ConvGRUWeights<T>& w,
                              const std::optional<Var<T>>& h0 = std::nullopt);

/// Bidirectional module: forward scan over the frames, backward scan over the
/// forward hidden states (stacked, not parallel), then
/// out_t = tanh(fuse_f * hf_t + fuse_b * hb_t).
template <typename T>
SequenceOutput<T> bcm_forward(const Var<T>& frames, const BCMWeights<T>& w);

}  // namespace tsinet
