#include "tsinet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <type_traits>

namespace tsinet {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <typename T>
MatMap<T> as_mat(T* p, std::size_t rows, std::size_t cols, std::size_t ld) {
  return MatMap<T>(p, Eigen::Index(rows), Eigen::Index(cols), Eigen::OuterStride<>(Eigen::Index(ld)));
}
template <typename T>
ConstMatMap<T> as_mat(const T* p, std::size_t rows, std::size_t cols, std::size_t ld) {
  return ConstMatMap<T>(p, Eigen::Index(rows), Eigen::Index(cols), Eigen::OuterStride<>(Eigen::Index(ld)));
}

// Byte budget for one chunk of unfolded columns.
constexpr std::size_t kColumnBudget = std::size_t(1) << 19;

struct ConvGeometry {
  std::size_t channels, height, width;  // image being unfolded
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;             // number of window positions
};

// Output columns [lo, hi) whose input column ox*s - pad + kx lies inside [0, W).
inline void valid_range(std::ptrdiff_t W, std::ptrdiff_t s, std::ptrdiff_t pad, std::ptrdiff_t kx, std::size_t out_w,
                        std::size_t& lo, std::size_t& hi) {
  const std::ptrdiff_t off = kx - pad;
  std::ptrdiff_t l = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t h = W - off <= 0 ? 0 : (W - off - 1) / s + 1;
  l = std::min<std::ptrdiff_t>(l, std::ptrdiff_t(out_w));
  h = std::clamp<std::ptrdiff_t>(h, l, std::ptrdiff_t(out_w));
  lo = std::size_t(l);
  hi = std::size_t(h);
}

// Unfolds one C×H×W image into rows (c,ky,kx) × columns (oy,ox) of a matrix
// with row stride `ld`.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col, std::size_t ld) {
  const std::size_t k = g.kernel;
  const std::ptrdiff_t H = std::ptrdiff_t(g.height), W = std::ptrdiff_t(g.width);
  const std::ptrdiff_t pad = std::ptrdiff_t(g.pad), s = std::ptrdiff_t(g.stride);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* src = img + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = col + ((c * k + ky) * k + kx) * ld;
        std::size_t lo, hi;
        valid_range(W, s, pad, std::ptrdiff_t(kx), g.out_w, lo, hi);
        const std::ptrdiff_t x0 = std::ptrdiff_t(kx) - pad;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy) * s - pad + std::ptrdiff_t(ky);
          T* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= H) {
            std::fill(row, row + g.out_w, T{0});
            continue;
          }
          const T* line = src + iy * W + x0;
          std::fill(row, row + lo, T{0});
          if (s == 1) {
            std::copy(line + lo, line + hi, row + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) row[ox] = line[std::ptrdiff_t(ox) * s];
          }
          std::fill(row + hi, row + g.out_w, T{0});
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into the image.
template <typename T>
void col2im(const T* col, std::size_t ld, const ConvGeometry& g, T* img) {
  const std::size_t k = g.kernel;
  const std::ptrdiff_t H = std::ptrdiff_t(g.height), W = std::ptrdiff_t(g.width);
  const std::ptrdiff_t pad = std::ptrdiff_t(g.pad), s = std::ptrdiff_t(g.stride);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* dst = img + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = col + ((c * k + ky) * k + kx) * ld;
        std::size_t lo, hi;
        valid_range(W, s, pad, std::ptrdiff_t(kx), g.out_w, lo, hi);
        const std::ptrdiff_t x0 = std::ptrdiff_t(kx) - pad;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy) * s - pad + std::ptrdiff_t(ky);
          if (iy < 0 || iy >= H) continue;
          const T* row = src + oy * g.out_w;
          T* line = dst + iy * W + x0;
          if (s == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) line[ox] += row[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) line[std::ptrdiff_t(ox) * s] += row[ox];
          }
        }
      }
    }
  }
}

// Uninitialized scratch buffer.
template <typename T>
struct Scratch {
  explicit Scratch(std::size_t n) : buf(n ? new T[n] : nullptr) {}
  T* data() { return buf.get(); }
  std::unique_ptr<T[]> buf;
};

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     to_string(s));
  }
}

// [N,C,P] <-> [C, N*P] relayout.
template <typename T>
void gather_channels_major(const T* src, std::size_t N, std::size_t C, std::size_t P, T* dst) {
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) std::memcpy(dst + c * N * P + n * P, src + (n * C + c) * P, P * sizeof(T));
}
template <typename T>
void scatter_batch_major(const T* src, std::size_t N, std::size_t C, std::size_t P, T* dst) {
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) std::memcpy(dst + (n * C + c) * P, src + c * N * P + n * P, P * sizeof(T));
}
template <typename T>
void scatter_batch_major_add(const T* src, std::size_t N, std::size_t C, std::size_t P, T* dst) {
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const T* s = src + c * N * P + n * P;
      T* d = dst + (n * C + c) * P;
      for (std::size_t i = 0; i < P; ++i) d[i] += s[i];
    }
}

// `forward` maps a whole buffer: forward(in, out, n).
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, F forward, D derivative_from_output) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  forward(xv.raw(), out.raw(), xv.size());
  const std::size_t xid = x.id();
  return x.tape().record(
      std::move(out),
      [xid, derivative_from_output](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>& y) {
        Tensor<T>& gx = tape.grad(xid);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative_from_output(y[i]);
      },
      x);
}

}  // namespace

template <typename T>
using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
void sigmoid_values(const T* in, T* out, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    // Vectorized; stable for large |x|.
    ArrayMap<T>(out, Eigen::Index(n)) = ConstArrayMap<T>(in, Eigen::Index(n)).logistic();
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      // Split by sign so exp never overflows.
      const T v = in[i];
      if (v >= T{0}) {
        out[i] = T{1} / (T{1} + std::exp(-v));
      } else {
        const T e = std::exp(v);
        out[i] = e / (T{1} + e);
      }
    }
  }
}

template <typename T>
void tanh_values(const T* in, T* out, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    ArrayMap<T>(out, Eigen::Index(n)) = ConstArrayMap<T>(in, Eigen::Index(n)).tanh();
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
  }
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const std::optional<std::type_identity_t<Var<T>>>& bias, int stride,
              int padding) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = kernel.value();
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(w.shape(), 4, "conv2d", "kernel");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != Cin) {
    throw ShapeError("conv2d: input has " + std::to_string(Cin) + " channels but kernel " + to_string(w.shape()) +
                     " expects " + std::to_string(w.dim(1)));
  }
  if (w.dim(3) != k) throw ShapeError("conv2d: kernel must be square, got " + to_string(w.shape()));
  if (bias && bias->value().shape() != Shape{Cout}) {
    throw ShapeError("conv2d: bias shape " + to_string(bias->value().shape()) + " does not match Cout=" +
                     std::to_string(Cout));
  }
  const std::size_t p = std::size_t(padding), s = std::size_t(stride);
  if (H + 2 * p < k || W + 2 * p < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + to_string(x.shape()));
  }
  const ConvGeometry geo{Cin, H, W, k, s, p, (H + 2 * p - k) / s + 1, (W + 2 * p - k) / s + 1};
  const std::size_t K = Cin * k * k, P = geo.out_h * geo.out_w, cols = N * P;

  // Samples are processed in chunks whose unfolded columns stay cache-sized.
  const std::size_t chunk = std::clamp<std::size_t>(kColumnBudget / (K * P * sizeof(T)), 1, N);

  Tensor<T> out({N, Cout, geo.out_h, geo.out_w});
  {
    auto wm = as_mat(w.raw(), Cout, K, K);
    Scratch<T> col(K * chunk * P), tmp(chunk > 1 ? Cout * chunk * P : 0);
    for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
      const std::size_t nb = std::min(chunk, N - n0), cc = nb * P;
      for (std::size_t n = 0; n < nb; ++n) im2col(x.raw() + (n0 + n) * Cin * H * W, geo, col.data() + n * P, cc);
      auto cm = as_mat(static_cast<const T*>(col.data()), K, cc, cc);
      if (nb == 1) {
        as_mat(out.raw() + n0 * Cout * P, Cout, P, P).noalias() = wm * cm;
      } else {
        as_mat(tmp.data(), Cout, cc, cc).noalias() = wm * cm;
        scatter_batch_major(tmp.data(), nb, Cout, P, out.raw() + n0 * Cout * P);
      }
    }
    if (bias) {
      const T* b = bias->value().raw();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
          T* o = out.raw() + (n * Cout + co) * P;
          for (std::size_t i = 0; i < P; ++i) o[i] += b[co];
        }
    }
  }

  const std::size_t xid = input.id(), wid = kernel.id();
  const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
  auto fn = [=](Tape<T>& tape, const Tensor<T>& gout, const Tensor<T>&) {
    const bool need_x = tape.requires_grad(xid), need_w = tape.requires_grad(wid);
    if (bid && tape.requires_grad(*bid)) {
      Tensor<T>& gb = tape.grad(*bid);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
          const T* g = gout.raw() + (n * Cout + co) * P;
          T acc{0};
          for (std::size_t i = 0; i < P; ++i) acc += g[i];
          gb[co] += acc;
        }
    }
    if (!need_w && !need_x) return;
    const Tensor<T>& xv = tape.value(xid);
    const Tensor<T>& wv = tape.value(wid);
    T* gw = need_w ? tape.grad(wid).raw() : nullptr;
    T* gx = need_x ? tape.grad(xid).raw() : nullptr;
    Scratch<T> col(K * chunk * P), gathered(chunk > 1 ? Cout * chunk * P : 0);
    for (std::size_t n0 = 0; n0 < N; n0 += chunk) {
      const std::size_t nb = std::min(chunk, N - n0), cc = nb * P;
      const T* g = gout.raw() + n0 * Cout * P;
      if (nb > 1) {
        gather_channels_major(g, nb, Cout, P, gathered.data());
        g = gathered.data();
      }
      auto gm = as_mat(g, Cout, cc, cc);
      if (need_w) {
        for (std::size_t n = 0; n < nb; ++n) im2col(xv.raw() + (n0 + n) * Cin * H * W, geo, col.data() + n * P, cc);
        as_mat(gw, Cout, K, K).noalias() += gm * as_mat(static_cast<const T*>(col.data()), K, cc, cc).transpose();
      }
      if (need_x) {
        as_mat(col.data(), K, cc, cc).noalias() = as_mat(wv.raw(), Cout, K, K).transpose() * gm;
        for (std::size_t n = 0; n < nb; ++n) col2im(col.data() + n * P, cc, geo, gx + (n0 + n) * Cin * H * W);
      }
    }
  };
  if (bias) return input.tape().record(std::move(out), fn, input, kernel, *bias);
  return input.tape().record(std::move(out), fn, input, kernel);
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& kernel, const std::optional<std::type_identity_t<Var<T>>>& bias, int stride) {
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = kernel.value();
  require_rank(x.shape(), 4, "conv_transpose2d", "input");
  require_rank(w.shape(), 4, "conv_transpose2d", "kernel");
  if (stride < 1) throw ShapeError("conv_transpose2d: stride must be positive, got " + std::to_string(stride));
  const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != Cin) {
    throw ShapeError("conv_transpose2d: input has " + std::to_string(Cin) + " channels but kernel " +
                     to_string(w.shape()) + " expects " + std::to_string(w.dim(0)));
  }
  if (w.dim(3) != k) throw ShapeError("conv_transpose2d: kernel must be square, got " + to_string(w.shape()));
  if (bias && bias->value().shape() != Shape{Cout}) {
    throw ShapeError("conv_transpose2d: bias shape " + to_string(bias->value().shape()) + " does not match Cout");
  }
  const std::size_t s = std::size_t(stride);
  const std::size_t Ho = (H - 1) * s + k, Wo = (W - 1) * s + k;
  // Geometry of the equivalent forward conv that maps the output grid back to the input grid.
  const ConvGeometry geo{Cout, Ho, Wo, k, s, 0, H, W};
  const std::size_t KK = Cout * k * k, P = H * W, cols = N * P, Po = Ho * Wo;

  Tensor<T> out({N, Cout, Ho, Wo});
  {
    std::vector<T> xm;
    const T* xp = x.raw();
    if (N > 1) {
      xm.resize(Cin * cols);
      gather_channels_major(x.raw(), N, Cin, P, xm.data());
      xp = xm.data();
    }
    std::vector<T> col(KK * cols);
    as_mat(col.data(), KK, cols, cols).noalias() = as_mat(w.raw(), Cin, KK, KK).transpose() * as_mat(xp, Cin, cols, cols);
    for (std::size_t n = 0; n < N; ++n) col2im(col.data() + n * P, cols, geo, out.raw() + n * Cout * Po);
    if (bias) {
      const T* b = bias->value().raw();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
          T* o = out.raw() + (n * Cout + co) * Po;
          for (std::size_t i = 0; i < Po; ++i) o[i] += b[co];
        }
    }
  }

  const std::size_t xid = input.id(), wid = kernel.id();
  const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
  auto fn = [=](Tape<T>& tape, const Tensor<T>& gout, const Tensor<T>&) {
    if (bid && tape.requires_grad(*bid)) {
      Tensor<T>& gb = tape.grad(*bid);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
          const T* gp = gout.raw() + (n * Cout + co) * Po;
          T acc{0};
          for (std::size_t i = 0; i < Po; ++i) acc += gp[i];
          gb[co] += acc;
        }
    }
    const bool need_x = tape.requires_grad(xid), need_w = tape.requires_grad(wid);
    if (!need_x && !need_w) return;
    std::vector<T> gcol(KK * cols);
    for (std::size_t n = 0; n < N; ++n) im2col(gout.raw() + n * Cout * Po, geo, gcol.data() + n * P, cols);
    auto gm = as_mat(static_cast<const T*>(gcol.data()), KK, cols, cols);
    if (need_w) {
      const Tensor<T>& xv = tape.value(xid);
      std::vector<T> xm;
      const T* xp = xv.raw();
      if (N > 1) {
        xm.resize(Cin * cols);
        gather_channels_major(xv.raw(), N, Cin, P, xm.data());
        xp = xm.data();
      }
      Tensor<T>& gw = tape.grad(wid);
      as_mat(gw.raw(), Cin, KK, KK).noalias() += as_mat(xp, Cin, cols, cols) * gm.transpose();
    }
    if (need_x) {
      const Tensor<T>& wv = tape.value(wid);
      Tensor<T>& gx = tape.grad(xid);
      if (N == 1) {
        as_mat(gx.raw(), Cin, P, P).noalias() += as_mat(wv.raw(), Cin, KK, KK) * gm;
      } else {
        std::vector<T> tmp(Cin * cols);
        as_mat(tmp.data(), Cin, cols, cols).noalias() = as_mat(wv.raw(), Cin, KK, KK) * gm;
        scatter_batch_major_add(tmp.data(), N, Cin, P, gx.raw());
      }
    }
  };
  if (bias) return input.tape().record(std::move(out), fn, input, kernel, *bias);
  return input.tape().record(std::move(out), fn, input, kernel);
}

template <typename T>
MaxPoolResult<T> maxpool2d(const Var<T>& input) {
  const Tensor<T>& x = input.value();
  require_rank(x.shape(), 4, "maxpool2d", "input");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("maxpool2d: spatial dims must be even, got " + to_string(x.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out({N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t base = nc * H * W;
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t xx = 0; xx < Wo; ++xx, ++o) {
        const std::size_t i0 = base + 2 * y * W + 2 * xx;
        const std::size_t cand[4] = {i0, i0 + 1, i0 + W, i0 + W + 1};
        std::size_t best = cand[0];
        for (int j = 1; j < 4; ++j)
          if (x[cand[j]] > x[best]) best = cand[j];
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  const std::size_t xid = input.id();
  auto shared = std::make_shared<const std::vector<std::size_t>>(argmax);
  Var<T> v = input.tape().record(
      std::move(out),
      [xid, shared](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>& gx = tape.grad(xid);
        const auto& idx = *shared;
        for (std::size_t i = 0; i < g.size(); ++i) gx[idx[i]] += g[i];
      },
      input);
  return {v, std::move(argmax)};
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(x, sigmoid_values<T>, [](T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary(x, tanh_values<T>, [](T y) { return T{1} - y * y; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary(
      x,
      [](const T* in, T* out, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
      },
      [](T y) { return y > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(
      std::move(out),
      [aid, bid](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        if (tape.requires_grad(aid)) {
          Tensor<T>& ga = tape.grad(aid);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tape.requires_grad(bid)) {
          Tensor<T>& gb = tape.grad(bid);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      },
      a, b);
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(
      std::move(out),
      [aid, bid](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        if (tape.requires_grad(aid)) {
          Tensor<T>& ga = tape.grad(aid);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tape.requires_grad(bid)) {
          Tensor<T>& gb = tape.grad(bid);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      },
      a, b);
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "hadamard");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(
      std::move(out),
      [aid, bid](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        const Tensor<T>& av = tape.value(aid);
        const Tensor<T>& bv = tape.value(bid);
        if (tape.requires_grad(aid)) {
          Tensor<T>& ga = tape.grad(aid);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (tape.requires_grad(bid)) {
          Tensor<T>& gb = tape.grad(bid);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
      },
      a, b);
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  const std::size_t aid = a.id();
  return a.tape().record(
      std::move(out),
      [aid, s](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>& ga = tape.grad(aid);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
      },
      a);
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch " + to_string(first) + " vs " + to_string(s));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat: shape mismatch " + to_string(first) + " vs " + to_string(s) + " along axis " +
                         std::to_string(d));
      }
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_block = out_shape[axis] * inner;

  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& v = parts[p].value();
    const std::size_t block = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.raw() + o * block, block, out.raw() + o * out_block + offset);
    offset += block;
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record_many(
      std::move(out),
      [ids, extents, outer, inner, out_block](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          const std::size_t block = extents[p] * inner;
          if (tape.requires_grad(ids[p])) {
            Tensor<T>& gp = tape.grad(ids[p]);
            for (std::size_t o = 0; o < outer; ++o) {
              const T* src = g.raw() + o * out_block + off;
              T* dst = gp.raw() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          off += block;
        }
      },
      parts);
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("slice: axis out of range for " + to_string(s));
  if (begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for extent " +
                     std::to_string(s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t in_block = s[axis] * inner, out_block = (end - begin) * inner, off = begin * inner;
  Tensor<T> out(out_shape);
  const Tensor<T>& v = x.value();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(v.raw() + o * in_block + off, out_block, out.raw() + o * out_block);
  const std::size_t xid = x.id();
  return x.tape().record(
      std::move(out),
      [xid, outer, in_block, out_block, off](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>& gx = tape.grad(xid);
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g.raw() + o * out_block;
          T* dst = gx.raw() + o * in_block + off;
          for (std::size_t i = 0; i < out_block; ++i) dst[i] += src[i];
        }
      },
      x);
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t xid = x.id();
  return x.tape().record(
      std::move(out),
      [xid](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>& gx = tape.grad(xid);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      x);
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  const Tensor<T>& v = x.value();
  T acc{0};
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i];
  const std::size_t xid = x.id();
  return x.tape().record(
      Tensor<T>(Shape{}, acc),
      [xid](Tape<T>& tape, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>& gx = tape.grad(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
      },
      x);
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(n));
}

#define TSINET_INSTANTIATE_OPS(T)                                                                            \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const std::optional<std::type_identity_t<Var<T>>>&, int, int);          \
  template Var<T> conv_transpose2d<T>(const Var<T>&, const Var<T>&, const std::optional<std::type_identity_t<Var<T>>>&, int);     \
  template MaxPoolResult<T> maxpool2d<T>(const Var<T>&);                                                     \
  template void sigmoid_values<T>(const T*, T*, std::size_t);                                                \
  template void tanh_values<T>(const T*, T*, std::size_t);                                                   \
  template Var<T> sigmoid<T>(const Var<T>&);                                                                 \
  template Var<T> tanh<T>(const Var<T>&);                                                                    \
  template Var<T> relu<T>(const Var<T>&);                                                                    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> hadamard<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> scale<T>(const Var<T>&, T);                                                                \
  template Var<T> concat<T>(const std::vector<Var<T>>&, std::size_t);                                        \
  template Var<T> slice<T>(const Var<T>&, std::size_t, std::size_t, std::size_t);                            \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                          \
  template Var<T> sum<T>(const Var<T>&);                                                                     \
  template Var<T> mean<T>(const Var<T>&);

TSINET_INSTANTIATE_OPS(float)
TSINET_INSTANTIATE_OPS(double)

}  // namespace tsinet
