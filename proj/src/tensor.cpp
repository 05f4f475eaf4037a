#include "cloudadv/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cloudadv::tensor {

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0 || input + 2 * padding < kernel) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  return (input + 2 * padding - kernel) / stride + 1;
}

std::size_t deconv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0 || input == 0 || (input - 1) * stride + kernel <= 2 * padding) {
    throw ShapeError("deconv2d: padding consumes the whole output");
  }
  return (input - 1) * stride + kernel - 2 * padding;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, padding, out_height, out_width;
};

// Unfolds one C x H x W image into rows (c, kh, kw) and columns (oh, ow);
// `ld` is the row stride of the destination so several images can share it.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols, std::size_t ld) {
  const auto pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = x + c * g.height * g.width;
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        T* row = cols + ((c * g.kernel + kh) * g.kernel + kw) * ld;
        for (std::size_t oh = 0; oh < g.out_height; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + kh) - pad;
          T* dst = row + oh * g.out_width;
          if (ih < 0 || ih >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_width, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * g.width;
          for (std::size_t ow = 0; ow < g.out_width; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kw) - pad;
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.width)) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column entries back onto the image, summing
// overlaps.
template <typename T>
void col2im(const T* cols, std::size_t ld, const ConvGeometry& g, T* x) {
  const auto pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = x + c * g.height * g.width;
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        const T* row = cols + ((c * g.kernel + kh) * g.kernel + kw) * ld;
        for (std::size_t oh = 0; oh < g.out_height; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          T* dst = plane + static_cast<std::size_t>(ih) * g.width;
          const T* src = row + oh * g.out_width;
          for (std::size_t ow = 0; ow < g.out_width; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kw) - pad;
            if (iw >= 0 && iw < static_cast<long>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

}  // namespace

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad, std::function<void(Tape&, std::size_t)> backward) {
  nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad, std::move(backward)});
  return Var{nodes_.size() - 1};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("tape variable does not exist");
  return nodes_[v.id];
}

template <typename T>
Tensor<T>& Tape<T>::grad_ref(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
Var Tape<T>::fully_connected(Var x, Var w, Var b) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& wv = value(w);
  const Tensor<T>& bv = value(b);
  require(xv.rank() == 2 && wv.rank() == 2 && bv.rank() == 1, "fully_connected: expected x[B,in], w[in,out], b[out]");
  const std::size_t batch = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  require(wv.dim(0) == in && bv.dim(0) == out,
          "fully_connected: shapes " + shape_string(xv.shape()) + " x " + shape_string(wv.shape()) + " + " +
              shape_string(bv.shape()) + " do not compose");

  Tensor<T> y({batch, out});
  MapR<T> ym(y.data().data(), batch, out);
  ym.noalias() = CMapR<T>(xv.data().data(), batch, in) * CMapR<T>(wv.data().data(), in, out);
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data().data(), out);

  const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
  return push(std::move(y), rg, [x, w, b, batch, in, out](Tape& tape, std::size_t self) {
    CMapR<T> dy(tape.upstream(self).data().data(), batch, out);
    if (tape.nodes_[x.id].requires_grad) {
      MapR<T>(tape.grad_ref(x.id).data().data(), batch, in).noalias() +=
          dy * CMapR<T>(tape.nodes_[w.id].value.data().data(), in, out).transpose();
    }
    if (tape.nodes_[w.id].requires_grad) {
      MapR<T>(tape.grad_ref(w.id).data().data(), in, out).noalias() +=
          CMapR<T>(tape.nodes_[x.id].value.data().data(), batch, in).transpose() * dy;
    }
    if (tape.nodes_[b.id].requires_grad) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(tape.grad_ref(b.id).data().data(), out) +=
          dy.colwise().sum();
    }
  });
}

template <typename T>
Var Tape<T>::conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& kv = value(kernel);
  const Tensor<T>& bv = value(bias);
  require(xv.rank() == 4 && kv.rank() == 4 && bv.rank() == 1, "conv2d: expected x[B,C,H,W], kernel[Co,Ci,k,k], bias[Co]");
  require(kv.dim(1) == xv.dim(1) && kv.dim(2) == kv.dim(3) && bv.dim(0) == kv.dim(0),
          "conv2d: kernel " + shape_string(kv.shape()) + " incompatible with input " + shape_string(xv.shape()));
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), cout = kv.dim(0), k = kv.dim(2);
  ConvGeometry g{cin, xv.dim(2), xv.dim(3), k, stride, padding, conv_output_size(xv.dim(2), k, stride, padding),
                 conv_output_size(xv.dim(3), k, stride, padding)};
  const std::size_t hw_out = g.out_height * g.out_width;
  const std::size_t cols_n = batch * hw_out;
  const std::size_t ckk = cin * k * k;
  const std::size_t in_plane = cin * g.height * g.width;

  Buffer<T> cols(ckk * cols_n);
  for (std::size_t b = 0; b < batch; ++b) im2col(xv.data().data() + b * in_plane, g, cols.data() + b * hw_out, cols_n);

  MatR<T> ymat = CMapR<T>(kv.data().data(), cout, ckk) * CMapR<T>(cols.data(), ckk, cols_n);
  Tensor<T> y({batch, cout, g.out_height, g.out_width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* dst = y.data().data() + (b * cout + co) * hw_out;
      const T* src = ymat.data() + co * cols_n + b * hw_out;
      for (std::size_t i = 0; i < hw_out; ++i) dst[i] = src[i] + bv[co];
    }
  }

  const bool rg = requires_grad(x) || requires_grad(kernel) || requires_grad(bias);
  return push(std::move(y), rg,
              [x, kernel, bias, g, batch, cout, ckk, hw_out, cols_n, in_plane, cols = std::move(cols)](
                  Tape& tape, std::size_t self) {
                const T* up = tape.upstream(self).data().data();
                MatR<T> dy(cout, cols_n);
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t co = 0; co < cout; ++co) {
                    std::copy_n(up + (b * cout + co) * hw_out, hw_out, dy.data() + co * cols_n + b * hw_out);
                  }
                }
                if (tape.nodes_[kernel.id].requires_grad) {
                  MapR<T>(tape.grad_ref(kernel.id).data().data(), cout, ckk).noalias() +=
                      dy * CMapR<T>(cols.data(), ckk, cols_n).transpose();
                }
                if (tape.nodes_[bias.id].requires_grad) {
                  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(tape.grad_ref(bias.id).data().data(), cout) +=
                      dy.rowwise().sum();
                }
                if (tape.nodes_[x.id].requires_grad) {
                  MatR<T> dcols = CMapR<T>(tape.nodes_[kernel.id].value.data().data(), cout, ckk).transpose() * dy;
                  T* dx = tape.grad_ref(x.id).data().data();
                  for (std::size_t b = 0; b < batch; ++b) col2im(dcols.data() + b * hw_out, cols_n, g, dx + b * in_plane);
                }
              });
}

template <typename T>
Var Tape<T>::deconv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& kv = value(kernel);
  const Tensor<T>& bv = value(bias);
  require(xv.rank() == 4 && kv.rank() == 4 && bv.rank() == 1,
          "deconv2d: expected x[B,C,H,W], kernel[Ci,Co,k,k], bias[Co]");
  require(kv.dim(0) == xv.dim(1) && kv.dim(2) == kv.dim(3) && bv.dim(0) == kv.dim(1),
          "deconv2d: kernel " + shape_string(kv.shape()) + " incompatible with input " + shape_string(xv.shape()));
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), cout = kv.dim(1), k = kv.dim(2);
  const std::size_t hin = xv.dim(2), win = xv.dim(3);
  // Geometry of the forward convolution this operator is the adjoint of.
  ConvGeometry g{cout, deconv_output_size(hin, k, stride, padding), deconv_output_size(win, k, stride, padding),
                 k, stride, padding, hin, win};
  const std::size_t hw_in = hin * win;
  const std::size_t cols_n = batch * hw_in;
  const std::size_t ckk = cout * k * k;
  const std::size_t out_plane = cout * g.height * g.width;

  MatR<T> xmat(cin, cols_n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < cin; ++c) {
      std::copy_n(xv.data().data() + (b * cin + c) * hw_in, hw_in, xmat.data() + c * cols_n + b * hw_in);
    }
  }
  MatR<T> cols = CMapR<T>(kv.data().data(), cin, ckk).transpose() * xmat;
  Tensor<T> y({batch, cout, g.height, g.width});
  T* yd = y.data().data();
  for (std::size_t b = 0; b < batch; ++b) col2im(cols.data() + b * hw_in, cols_n, g, yd + b * out_plane);
  const std::size_t plane = g.height * g.width;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* dst = yd + b * out_plane + co * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += bv[co];
    }
  }

  const bool rg = requires_grad(x) || requires_grad(kernel) || requires_grad(bias);
  return push(std::move(y), rg,
              [x, kernel, bias, g, batch, cin, cout, ckk, hw_in, cols_n, out_plane, plane, xmat = std::move(xmat)](
                  Tape& tape, std::size_t self) {
                const T* up = tape.upstream(self).data().data();
                MatR<T> dcols(ckk, cols_n);
                for (std::size_t b = 0; b < batch; ++b) im2col(up + b * out_plane, g, dcols.data() + b * hw_in, cols_n);
                if (tape.nodes_[kernel.id].requires_grad) {
                  MapR<T>(tape.grad_ref(kernel.id).data().data(), cin, ckk).noalias() += xmat * dcols.transpose();
                }
                if (tape.nodes_[bias.id].requires_grad) {
                  T* db = tape.grad_ref(bias.id).data().data();
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t co = 0; co < cout; ++co) {
                      const T* src = up + b * out_plane + co * plane;
                      T acc = T(0);
                      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                      db[co] += acc;
                    }
                  }
                }
                if (tape.nodes_[x.id].requires_grad) {
                  MatR<T> dx = CMapR<T>(tape.nodes_[kernel.id].value.data().data(), cin, ckk) * dcols;
                  T* dst = tape.grad_ref(x.id).data().data();
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t c = 0; c < cin; ++c) {
                      const T* src = dx.data() + c * cols_n + b * hw_in;
                      T* out = dst + (b * cin + c) * hw_in;
                      for (std::size_t i = 0; i < hw_in; ++i) out[i] += src[i];
                    }
                  }
                }
              });
}

template <typename T>
Var Tape<T>::leaky_relu(Var x, T slope) {
  Tensor<T> y = value(x);
  for (T& v : y.data()) v = v > T(0) ? v : slope * v;
  return push(std::move(y), requires_grad(x), [x, slope](Tape& tape, std::size_t self) {
    if (!tape.nodes_[x.id].requires_grad) return;
    const auto in = tape.nodes_[x.id].value.data();
    const auto up = tape.upstream(self).data();
    auto dx = tape.grad_ref(x.id).data();
    for (std::size_t i = 0; i < in.size(); ++i) dx[i] += up[i] * (in[i] > T(0) ? T(1) : slope);
  });
}

template <typename T>
Var Tape<T>::tanh(Var x) {
  Tensor<T> y = value(x);
  for (T& v : y.data()) v = std::tanh(v);
  return push(std::move(y), requires_grad(x), [x](Tape& tape, std::size_t self) {
    if (!tape.nodes_[x.id].requires_grad) return;
    const auto out = tape.nodes_[self].value.data();
    const auto up = tape.upstream(self).data();
    auto dx = tape.grad_ref(x.id).data();
    for (std::size_t i = 0; i < out.size(); ++i) dx[i] += up[i] * (T(1) - out[i] * out[i]);
  });
}

template <typename T>
Var Tape<T>::sigmoid(Var x) {
  Tensor<T> y = value(x);
  for (T& v : y.data()) v = T(1) / (T(1) + std::exp(-v));
  return push(std::move(y), requires_grad(x), [x](Tape& tape, std::size_t self) {
    if (!tape.nodes_[x.id].requires_grad) return;
    const auto out = tape.nodes_[self].value.data();
    const auto up = tape.upstream(self).data();
    auto dx = tape.grad_ref(x.id).data();
    for (std::size_t i = 0; i < out.size(); ++i) dx[i] += up[i] * out[i] * (T(1) - out[i]);
  });
}

template <typename T>
Var Tape<T>::concat_channels(Var a, Var b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  require(av.rank() >= 2 && av.rank() == bv.rank() && av.dim(0) == bv.dim(0),
          "concat_channels: batch/rank mismatch between " + shape_string(av.shape()) + " and " +
              shape_string(bv.shape()));
  for (std::size_t d = 2; d < av.rank(); ++d) {
    require(av.dim(d) == bv.dim(d), "concat_channels: spatial mismatch between " + shape_string(av.shape()) +
                                        " and " + shape_string(bv.shape()));
  }
  const std::size_t batch = av.dim(0);
  const std::size_t a_block = av.size() / batch;
  const std::size_t b_block = bv.size() / batch;
  Shape shape = av.shape();
  shape[1] += bv.dim(1);
  Tensor<T> y(shape);
  for (std::size_t n = 0; n < batch; ++n) {
    T* dst = y.data().data() + n * (a_block + b_block);
    std::copy_n(av.data().data() + n * a_block, a_block, dst);
    std::copy_n(bv.data().data() + n * b_block, b_block, dst + a_block);
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(y), rg, [a, b, batch, a_block, b_block](Tape& tape, std::size_t self) {
    const T* up = tape.upstream(self).data().data();
    if (tape.nodes_[a.id].requires_grad) {
      T* da = tape.grad_ref(a.id).data().data();
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = up + n * (a_block + b_block);
        for (std::size_t i = 0; i < a_block; ++i) da[n * a_block + i] += src[i];
      }
    }
    if (tape.nodes_[b.id].requires_grad) {
      T* db = tape.grad_ref(b.id).data().data();
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = up + n * (a_block + b_block) + a_block;
        for (std::size_t i = 0; i < b_block; ++i) db[n * b_block + i] += src[i];
      }
    }
  });
}

template <typename T>
Var Tape<T>::slice_channels(Var x, std::size_t begin, std::size_t end) {
  const Tensor<T>& xv = value(x);
  require(xv.rank() >= 2 && begin < end && end <= xv.dim(1),
          "slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
              shape_string(xv.shape()));
  const std::size_t batch = xv.dim(0);
  const std::size_t channels = xv.dim(1);
  const std::size_t inner = xv.size() / (batch * channels);
  Shape shape = xv.shape();
  shape[1] = end - begin;
  Tensor<T> y(shape);
  const std::size_t block = (end - begin) * inner;
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(xv.data().data() + (n * channels + begin) * inner, block, y.data().data() + n * block);
  }
  return push(std::move(y), requires_grad(x), [x, batch, channels, begin, inner, block](Tape& tape, std::size_t self) {
    if (!tape.nodes_[x.id].requires_grad) return;
    const T* up = tape.upstream(self).data().data();
    T* dx = tape.grad_ref(x.id).data().data();
    for (std::size_t n = 0; n < batch; ++n) {
      T* dst = dx + (n * channels + begin) * inner;
      for (std::size_t i = 0; i < block; ++i) dst[i] += up[n * block + i];
    }
  });
}

template <typename T>
Var Tape<T>::reshape(Var x, Shape shape) {
  const Tensor<T>& xv = value(x);
  require(shape_size(shape) == xv.size(),
          "reshape: cannot view " + shape_string(xv.shape()) + " as " + shape_string(shape));
  std::vector<T> data(xv.data().begin(), xv.data().end());
  return push(Tensor<T>(std::move(shape), std::move(data)), requires_grad(x), [x](Tape& tape, std::size_t self) {
    if (!tape.nodes_[x.id].requires_grad) return;
    const auto up = tape.upstream(self).data();
    auto dx = tape.grad_ref(x.id).data();
    for (std::size_t i = 0; i < up.size(); ++i) dx[i] += up[i];
  });
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  require(av.shape() == bv.shape(), "add: shape mismatch " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(y), rg, [a, b](Tape& tape, std::size_t self) {
    const auto up = tape.upstream(self).data();
    for (Var v : {a, b}) {
      if (!tape.nodes_[v.id].requires_grad) continue;
      auto dv = tape.grad_ref(v.id).data();
      for (std::size_t i = 0; i < up.size(); ++i) dv[i] += up[i];
    }
  });
}

template <typename T>
Var Tape<T>::scale(Var x, T factor) {
  Tensor<T> y = value(x);
  for (T& v : y.data()) v *= factor;
  return push(std::move(y), requires_grad(x), [x, factor](Tape& tape, std::size_t self) {
    if (!tape.nodes_[x.id].requires_grad) return;
    const auto up = tape.upstream(self).data();
    auto dx = tape.grad_ref(x.id).data();
    for (std::size_t i = 0; i < up.size(); ++i) dx[i] += up[i] * factor;
  });
}

template <typename T>
Var Tape<T>::bce_loss(Var pred, T target) {
  constexpr T kEps = T(1e-7);
  const Tensor<T>& pv = value(pred);
  require(!pv.empty(), "bce_loss: empty prediction");
  T total = T(0);
  for (const T p : pv.data()) {
    const T pc = std::clamp(p, kEps, T(1) - kEps);
    total -= target * std::log(pc) + (T(1) - target) * std::log(T(1) - pc);
  }
  const T n = static_cast<T>(pv.size());
  return push(Tensor<T>({1}, {total / n}), requires_grad(pred), [pred, target, n](Tape& tape, std::size_t self) {
    if (!tape.nodes_[pred.id].requires_grad) return;
    const T up = tape.upstream(self)[0];
    const auto p = tape.nodes_[pred.id].value.data();
    auto dp = tape.grad_ref(pred.id).data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] <= kEps || p[i] >= T(1) - kEps) continue;
      dp[i] += up * (-target / p[i] + (T(1) - target) / (T(1) - p[i])) / n;
    }
  });
}

template <typename T>
Var Tape<T>::bce_with_logits(Var logits, T target) {
  const Tensor<T>& lv = value(logits);
  require(!lv.empty(), "bce_with_logits: empty input");
  T total = T(0);
  for (const T l : lv.data()) {
    // max(l, 0) - l*t + log(1 + exp(-|l|))
    total += std::max(l, T(0)) - l * target + std::log1p(std::exp(-std::abs(l)));
  }
  const T n = static_cast<T>(lv.size());
  return push(Tensor<T>({1}, {total / n}), requires_grad(logits), [logits, target, n](Tape& tape, std::size_t self) {
    if (!tape.nodes_[logits.id].requires_grad) return;
    const T up = tape.upstream(self)[0];
    const auto l = tape.nodes_[logits.id].value.data();
    auto dl = tape.grad_ref(logits.id).data();
    for (std::size_t i = 0; i < l.size(); ++i) {
      const T s = l[i] >= T(0) ? T(1) / (T(1) + std::exp(-l[i])) : std::exp(l[i]) / (T(1) + std::exp(l[i]));
      dl[i] += up * (s - target) / n;
    }
  });
}

template <typename T>
Var Tape<T>::softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor<T>& lv = value(logits);
  require(lv.rank() == 2 && lv.dim(0) == labels.size(), "softmax_cross_entropy: expected logits[B,m] and B labels");
  const std::size_t batch = lv.dim(0), classes = lv.dim(1);
  std::vector<T> probs(lv.size());
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  T total = T(0);
  for (std::size_t b = 0; b < batch; ++b) {
    require(targets[b] < classes, "softmax_cross_entropy: label out of range");
    const T* row = lv.data().data() + b * classes;
    const T peak = *std::max_element(row, row + classes);
    T norm = T(0);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = std::exp(row[c] - peak);
      norm += probs[b * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= norm;
    total -= (row[targets[b]] - peak) - std::log(norm);
  }
  const T n = static_cast<T>(batch);
  return push(Tensor<T>({1}, {total / n}), requires_grad(logits),
              [logits, batch, classes, n, probs = std::move(probs), targets = std::move(targets)](Tape& tape,
                                                                                                  std::size_t self) {
                if (!tape.nodes_[logits.id].requires_grad) return;
                const T up = tape.upstream(self)[0];
                auto dl = tape.grad_ref(logits.id).data();
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t c = 0; c < classes; ++c) {
                    const T onehot = c == targets[b] ? T(1) : T(0);
                    dl[b * classes + c] += up * (probs[b * classes + c] - onehot) / n;
                  }
                }
              });
}

template <typename T>
void Tape<T>::backward(Var loss) {
  const Node& root = node(loss);
  require(root.value.size() == 1, "backward: loss must be a scalar, got " + shape_string(root.value.shape()));
  for (Node& n : nodes_) n.grad = Tensor<T>{};
  if (!root.requires_grad) return;
  grad_ref(loss.id)[0] = T(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  if (state.first_moment.empty()) {
    for (const Tensor<T>* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state tracks a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.first_moment[i].shape()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }

  ++state.step;
  const T correction1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T correction2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g[j] * g[j];
      const T m_hat = m[j] / correction1;
      const T v_hat = v[j] / correction2;
      p[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

template <typename T>
Tensor<T> uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ShapeError("uniform_init: fan_in must be positive");
  const double limit = std::sqrt(1.0 / static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(uniform(rng, -limit, limit));
  return t;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

template void adam_step<float>(std::span<Tensor<float>* const>, std::span<const Tensor<float>>, AdamState<float>&);
template void adam_step<double>(std::span<Tensor<double>* const>, std::span<const Tensor<double>>, AdamState<double>&);
template Tensor<float> uniform_init<float>(Shape, std::size_t, Rng&);
template Tensor<double> uniform_init<double>(Shape, std::size_t, Rng&);

}  // namespace cloudadv::tensor
