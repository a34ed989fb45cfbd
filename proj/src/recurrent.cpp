#include "tsinet/recurrent.hpp"

#include <memory>
#include <string>
#include <vector>

namespace tsinet {
namespace {

// The three input-side (and three state-side) convolutions share an input,
// so they run as one convolution with concatenated output channels.
template <typename T>
struct FusedCell {
  Var<T> kernel_x, kernel_h;
  std::optional<Var<T>> bias_x, bias_h;
  std::size_t channels;
  int pad_x, pad_h;
};

template <typename T>
std::optional<Var<T>> fuse_bias(const ConvLayer<T>& a, const ConvLayer<T>& b, const ConvLayer<T>& c) {
  if (!a.bias && !b.bias && !c.bias) return std::nullopt;
  Tape<T>& tape = a.kernel.tape();
  auto part = [&tape](const ConvLayer<T>& l) {
    return l.bias ? *l.bias : tape.constant(Tensor<T>::zeros({l.kernel.shape()[0]}));
  };
  return concat<T>({part(a), part(b), part(c)}, 0);
}

template <typename T>
FusedCell<T> fuse(const ConvGRUWeights<T>& w) {
  const std::size_t C = w.update_h.kernel.shape()[0];
  for (const ConvLayer<T>* l : {&w.update_x, &w.update_h, &w.reset_x, &w.reset_h, &w.cand_x, &w.cand_h}) {
    if (l->kernel.shape()[0] != C) {
      throw ShapeError("ConvGRU kernels must share the output channel count " + std::to_string(C) + ", got " +
                       to_string(l->kernel.shape()));
    }
  }
  FusedCell<T> f;
  f.channels = C;
  f.kernel_x = concat<T>({w.update_x.kernel, w.reset_x.kernel, w.cand_x.kernel}, 0);
  f.kernel_h = concat<T>({w.update_h.kernel, w.reset_h.kernel, w.cand_h.kernel}, 0);
  f.bias_x = fuse_bias(w.update_x, w.reset_x, w.cand_x);
  f.bias_h = fuse_bias(w.update_h, w.reset_h, w.cand_h);
  f.pad_x = static_cast<int>((w.update_x.kernel.shape()[2] - 1) / 2);
  f.pad_h = static_cast<int>((w.update_h.kernel.shape()[2] - 1) / 2);
  return f;
}

template <typename T>
Var<T> project_inputs(const Var<T>& x, const FusedCell<T>& f) {
  return conv2d(x, f.kernel_x, f.bias_x, 1, f.pad_x);
}

// One step given the precomputed input projection [1,3C,H,W].
template <typename T>
CellState<T> step(const Var<T>& x_proj, const Var<T>& h_prev, const FusedCell<T>& f) {
  const std::size_t C = f.channels;
  if (h_prev.shape().size() != 4 || h_prev.shape()[1] != C) {
    throw ShapeError("ConvGRU: hidden state " + to_string(h_prev.shape()) + " does not have " + std::to_string(C) +
                     " channels");
  }
  const Var<T> h_proj = conv2d(h_prev, f.kernel_h, f.bias_h, 1, f.pad_h);
  require_same_shape(x_proj.shape(), h_proj.shape(), "ConvGRU projections");
  const Var<T> u = sigmoid(add(slice(x_proj, 1, 0, C), slice(h_proj, 1, 0, C)));
  const Var<T> r = sigmoid(add(slice(x_proj, 1, C, 2 * C), slice(h_proj, 1, C, 2 * C)));
  const Var<T> cand = tanh(add(slice(x_proj, 1, 2 * C, 3 * C), hadamard(r, slice(h_proj, 1, 2 * C, 3 * C))));
  // (1-U) o cand + U o h  ==  cand + U o (h - cand)
  const Var<T> h = add(cand, hadamard(u, sub(h_prev, cand)));
  return {h, u, r};
}

// Gate arithmetic of one step as a single tape node. Reads frame t of the
// batched input projection and returns the new hidden state.
template <typename T>
Var<T> fused_update(const Var<T>& proj, std::size_t t, const Var<T>& h_proj, const Var<T>& h_prev, std::size_t C) {
  const Shape& hs = h_prev.shape();
  const std::size_t P = hs[2] * hs[3], n = C * P;
  if (h_proj.shape() != Shape{1, 3 * C, hs[2], hs[3]}) {
    throw ShapeError("ConvGRU: state projection " + to_string(h_proj.shape()) + " does not match " + to_string(hs));
  }
  const T* x = proj.value().raw() + t * 3 * n;
  const T* hp = h_proj.value().raw();
  const T* prev = h_prev.value().raw();
  // Saved gates: u, r, candidate.
  auto saved = std::make_shared<std::vector<T>>(3 * n);
  T* u = saved->data();
  T* r = u + n;
  T* cand = r + n;
  std::vector<T> pre(n);
  for (std::size_t i = 0; i < n; ++i) pre[i] = x[i] + hp[i];
  sigmoid_values(pre.data(), u, n);
  for (std::size_t i = 0; i < n; ++i) pre[i] = x[n + i] + hp[n + i];
  sigmoid_values(pre.data(), r, n);
  for (std::size_t i = 0; i < n; ++i) pre[i] = x[2 * n + i] + r[i] * hp[2 * n + i];
  tanh_values(pre.data(), cand, n);
  Tensor<T> out(hs);
  T* h = out.raw();
  for (std::size_t i = 0; i < n; ++i) h[i] = cand[i] + u[i] * (prev[i] - cand[i]);

  const std::size_t pid = proj.id(), hid = h_proj.id(), prev_id = h_prev.id();
  return proj.tape().record(
      std::move(out),
      [=](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const T* u = saved->data();
        const T* r = u + n;
        const T* cand = r + n;
        const T* hpv = tape.value(hid).raw();
        const T* prevv = tape.value(prev_id).raw();
        T* gx = tape.requires_grad(pid) ? tape.grad(pid).raw() + t * 3 * n : nullptr;
        T* gh = tape.requires_grad(hid) ? tape.grad(hid).raw() : nullptr;
        T* gprev = tape.requires_grad(prev_id) ? tape.grad(prev_id).raw() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          const T gi = g[i];
          const T du = gi * (prevv[i] - cand[i]) * u[i] * (T{1} - u[i]);
          const T dn = gi * (T{1} - u[i]) * (T{1} - cand[i] * cand[i]);
          const T dr = dn * hpv[2 * n + i] * r[i] * (T{1} - r[i]);
          if (gx) {
            gx[i] += du;
            gx[n + i] += dr;
            gx[2 * n + i] += dn;
          }
          if (gh) {
            gh[i] += du;
            gh[n + i] += dr;
            gh[2 * n + i] += dn * r[i];
          }
          if (gprev) gprev[i] += gi * u[i];
        }
      },
      proj, h_proj, h_prev);
}

template <typename T>
void require_sequence(const Var<T>& frames, const char* op) {
  if (frames.shape().size() != 4) {
    throw ShapeError(std::string(op) + ": frames must be [T,C,H,W], got " + to_string(frames.shape()));
  }
  if (frames.shape()[0] == 0) throw ShapeError(std::string(op) + ": empty sequence");
}

template <typename T>
Var<T> zeros_like_frame(const Var<T>& frames, std::size_t channels) {
  const Shape& s = frames.shape();
  return frames.tape().constant(Tensor<T>::zeros({1, channels, s[2], s[3]}));
}

template <typename T>
std::vector<Var<T>> scan(const Var<T>& frames, const FusedCell<T>& f, Var<T> h, bool reverse) {
  const std::size_t steps = frames.shape()[0];
  const Var<T> proj = project_inputs(frames, f);
  std::vector<Var<T>> hs(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t t = reverse ? steps - 1 - i : i;
    if (h.shape().size() != 4 || h.shape()[1] != f.channels) {
      throw ShapeError("ConvGRU: hidden state " + to_string(h.shape()) + " does not have " +
                       std::to_string(f.channels) + " channels");
    }
    h = fused_update(proj, t, conv2d(h, f.kernel_h, f.bias_h, 1, f.pad_h), h, f.channels);
    hs[t] = h;
  }
  return hs;
}

}  // namespace

template <typename T>
CellState<T> convgru_cell_detailed(const Var<T>& frame, const Var<T>& h_prev, const ConvGRUWeights<T>& w) {
  require_same_shape(frame.shape(), h_prev.shape(), "convgru_cell_step");
  const FusedCell<T> f = fuse(w);
  return step(project_inputs(frame, f), h_prev, f);
}

template <typename T>
Var<T> convgru_cell_step(const Var<T>& frame, const Var<T>& h_prev, const ConvGRUWeights<T>& w) {
  return convgru_cell_detailed(frame, h_prev, w).hidden;
}

template <typename T>
SequenceOutput<T> ucm_forward(const Var<T>& frames, const ConvGRUWeights<T>& w, const std::optional<Var<T>>& h0) {
  require_sequence(frames, "ucm_forward");
  const FusedCell<T> f = fuse(w);
  Var<T> h = h0 ? *h0 : zeros_like_frame(frames, f.channels);
  std::vector<Var<T>> hs = scan(frames, f, h, false);
  const Var<T> outputs = hs.size() == 1 ? hs[0] : concat(hs, 0);
  return {outputs, hs.back()};
}

template <typename T>
SequenceOutput<T> bcm_forward(const Var<T>& frames, const BCMWeights<T>& w) {
  require_sequence(frames, "bcm_forward");
  const FusedCell<T> fwd = fuse(w.forward);
  const FusedCell<T> bwd = fuse(w.backward);
  std::vector<Var<T>> hf = scan(frames, fwd, zeros_like_frame(frames, fwd.channels), false);
  const Var<T> hf_all = hf.size() == 1 ? hf[0] : concat(hf, 0);
  std::vector<Var<T>> hb = scan(hf_all, bwd, zeros_like_frame(frames, bwd.channels), true);
  const Var<T> hb_all = hb.size() == 1 ? hb[0] : concat(hb, 0);
  const Var<T> outputs = tanh(add(w.fuse_f(hf_all), w.fuse_b(hb_all)));
  const std::size_t steps = frames.shape()[0];
  return {outputs, steps == 1 ? outputs : slice(outputs, 0, steps - 1, steps)};
}

template Var<float> convgru_cell_step(const Var<float>&, const Var<float>&, const ConvGRUWeights<float>&);
template Var<double> convgru_cell_step(const Var<double>&, const Var<double>&, const ConvGRUWeights<double>&);
template CellState<float> convgru_cell_detailed(const Var<float>&, const Var<float>&, const ConvGRUWeights<float>&);
template CellState<double> convgru_cell_detailed(const Var<double>&, const Var<double>&,
                                                 const ConvGRUWeights<double>&);
template SequenceOutput<float> ucm_forward(const Var<float>&, const ConvGRUWeights<float>&,
                                           const std::optional<Var<float>>&);
template SequenceOutput<double> ucm_forward(const Var<double>&, const ConvGRUWeights<double>&,
                                            const std::optional<Var<double>>&);
template SequenceOutput<float> bcm_forward(const Var<float>&, const BCMWeights<float>&);
template SequenceOutput<double> bcm_forward(const Var<double>&, const BCMWeights<double>&);

}  // namespace tsinet
