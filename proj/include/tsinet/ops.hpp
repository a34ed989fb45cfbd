#pragma once

#include <cstddef>
#include <optional>
#include <type_traits>
#include <vector>

#include "tsinet/tape.hpp"
#include "tsinet/tensor.hpp"

namespace tsinet {

/// 2D cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout].
/// Output [N,Cout,(H+2p-k)/s+1,(W+2p-k)/s+1].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const std::optional<std::type_identity_t<Var<T>>>& bias, int stride = 1,
              int padding = 0);

/// Transposed convolution (adjoint of a strided conv2d without padding).
/// input [N,Cin,H,W], kernel [Cin,Cout,k,k], bias [Cout].
/// Output [N,Cout,(H-1)s+k,(W-1)s+k]; with k == s that is exact spatial scaling by s.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& kernel, const std::optional<std::type_identity_t<Var<T>>>& bias,
                        int stride = 2);

template <typename T>
struct MaxPoolResult {
  Var<T> output;
  /// Flat input index selected for each output element.
  std::vector<std::size_t> argmax;
};

/// 2x2 max pooling with stride 2. Ties go to the first position in row-major window order.
template <typename T>
MaxPoolResult<T> maxpool2d(const Var<T>& input);

/// Elementwise kernels over raw buffers (in may equal out).
template <typename T>
void sigmoid_values(const T* in, T* out, std::size_t n);
template <typename T>
void tanh_values(const T* in, T* out, std::size_t n);

template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> tanh(const Var<T>& x);
template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);

/// Stacks along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);

/// [N,C1,H,W] ++ [N,C2,H,W] -> [N,C1+C2,H,W].
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  return concat<T>({a, b}, 1);
}

/// Half-open range [begin,end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

}  // namespace tsinet
