#include "messfn/ops.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace messfn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
  if (!x.defined() || x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(rank) + " input, got " +
                     (x.defined() ? shape_str(x.shape()) : std::string("undefined")));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, ho, wo, kh, kw, stride, ph, pw;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t plane_out() const { return ho * wo; }
  bool direct() const { return kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0; }
};

// Output columns [lo, hi) whose stride-1 input column ox + kx - pw is in range.
std::pair<std::size_t, std::size_t> valid_span(const ConvGeometry& g, std::size_t kx, long w) {
  const long shift = static_cast<long>(kx) - static_cast<long>(g.pw);
  const long lo = std::max(0L, -shift);
  const long hi = std::min(static_cast<long>(g.wo), w - shift);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* plane = x + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        T* dst = col + row * g.plane_out();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.ph);
          T* out = dst + oy * g.wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          const T* src = plane + iy * w;
          if (g.stride == 1) {
            const auto [lo, hi] = valid_span(g, kx, w);
            std::fill(out, out + lo, T(0));
            std::copy(src + lo + kx - g.pw, src + hi + kx - g.pw, out + lo);
            std::fill(out + hi, out + g.wo, T(0));
            continue;
          }
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pw);
            out[ox] = (ix < 0 || ix >= w) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dx) {
  const long h = static_cast<long>(g.h), w = static_cast<long>(g.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* plane = dx + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx, ++row) {
        const T* src = col + row * g.plane_out();
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.ph);
          if (iy < 0 || iy >= h) continue;
          T* out = plane + iy * w;
          const T* in = src + oy * g.wo;
          if (g.stride == 1) {
            const auto [lo, hi] = valid_span(g, kx, w);
            for (std::size_t ox = lo; ox < hi; ++ox) out[ox + kx - g.pw] += in[ox];
            continue;
          }
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pw);
            if (ix >= 0 && ix < w) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

// Elementwise unary op with derivative expressed through input and output.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [deriv](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
    }
  });
}

}  // namespace

std::size_t ConvSpec::out_height(std::size_t in_h) const {
  const long span = static_cast<long>(in_h + 2 * pad_h) - static_cast<long>(kernel_h);
  if (span < 0 || stride == 0) {
    throw ShapeError("conv2d: kernel height " + std::to_string(kernel_h) +
                     " exceeds padded input height " + std::to_string(in_h + 2 * pad_h));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

std::size_t ConvSpec::out_width(std::size_t in_w) const {
  const long span = static_cast<long>(in_w + 2 * pad_w) - static_cast<long>(kernel_w);
  if (span < 0 || stride == 0) {
    throw ShapeError("conv2d: kernel width " + std::to_string(kernel_w) +
                     " exceeds padded input width " + std::to_string(in_w + 2 * pad_w));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  require_rank(x, 4, "conv2d");
  if (spec.in_channels == 0 || spec.out_channels == 0 || spec.kernel_h == 0 ||
      spec.kernel_w == 0 || spec.stride == 0) {
    throw ShapeError("conv2d: channels, kernel and stride must be positive");
  }
  if (x.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                     " != spec in_channels " + std::to_string(spec.in_channels));
  }
  if (!weight.defined() || weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " +
                     (weight.defined() ? shape_str(weight.shape()) : "undefined") +
                     " != expected " + shape_str(spec.weight_shape()));
  }
  if (spec.has_bias) {
    if (!bias.defined() || bias.shape() != spec.bias_shape()) {
      throw ShapeError("conv2d: bias shape must be " + shape_str(spec.bias_shape()));
    }
  } else if (bias.defined()) {
    throw ShapeError("conv2d: bias given but spec.has_bias is false");
  }

  ConvGeometry g{x.dim(0),          x.dim(1),      x.dim(2),       x.dim(3),
                 spec.out_channels, spec.out_height(x.dim(2)), spec.out_width(x.dim(3)),
                 spec.kernel_h,     spec.kernel_w, spec.stride,    spec.pad_h,
                 spec.pad_w};

  std::vector<T> out(g.n * g.cout * g.plane_out());
  ConstMapMat<T> w(weight.data().data(), g.cout, g.k());
  std::vector<T> col(g.direct() ? 0 : g.k() * g.plane_out());
  const std::size_t in_stride = g.cin * g.h * g.w;
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* xn = x.data().data() + n * in_stride;
    if (!g.direct()) im2col(xn, g, col.data());
    ConstMapMat<T> cm(g.direct() ? xn : col.data(), g.k(), g.plane_out());
    MapMat<T> y(out.data() + n * g.cout * g.plane_out(), g.cout, g.plane_out());
    y.noalias() = w * cm;
    if (spec.has_bias) {
      for (std::size_t c = 0; c < g.cout; ++c) y.row(c).array() += bias.data()[c];
    }
  }

  std::vector<Tensor<T>> parents{x, weight};
  if (spec.has_bias) parents.push_back(bias);
  const bool has_bias = spec.has_bias;
  return Tensor<T>::make_result(
      {g.n, g.cout, g.ho, g.wo}, std::move(out), std::move(parents),
      [g, has_bias](TensorNode<T>& self) {
        auto& xp = *self.parents[0];
        auto& wp = *self.parents[1];
        ConstMapMat<T> w(wp.data.data(), g.cout, g.k());
        std::vector<T> col(g.direct() ? 0 : g.k() * g.plane_out());
        std::vector<T> dcol(g.k() * g.plane_out());
        const std::size_t in_stride = g.cin * g.h * g.w;
        for (std::size_t n = 0; n < g.n; ++n) {
          ConstMapMat<T> dy(self.grad.data() + n * g.cout * g.plane_out(), g.cout,
                            g.plane_out());
          const T* xn = xp.data.data() + n * in_stride;
          if (wp.requires_grad) {
            if (!g.direct()) im2col(xn, g, col.data());
            ConstMapMat<T> cm(g.direct() ? xn : col.data(), g.k(), g.plane_out());
            MapMat<T> dw(wp.ensure_grad().data(), g.cout, g.k());
            dw.noalias() += dy * cm.transpose();
          }
          if (has_bias && self.parents[2]->requires_grad) {
            auto db = self.parents[2]->ensure_grad();
            const T* dyn = self.grad.data() + n * g.cout * g.plane_out();
            for (std::size_t c = 0; c < g.cout; ++c) {
              T acc = 0;
              for (std::size_t i = 0; i < g.plane_out(); ++i) acc += dyn[c * g.plane_out() + i];
              db[c] += acc;
            }
          }
          if (xp.requires_grad) {
            T* dxn = xp.ensure_grad().data() + n * in_stride;
            if (g.direct()) {
              MapMat<T> dx(dxn, g.k(), g.plane_out());
              dx.noalias() += w.transpose() * dy;
            } else {
              MapMat<T> dc(dcol.data(), g.k(), g.plane_out());
              dc.noalias() = w.transpose() * dy;
              col2im(dcol.data(), g, dxn);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec& spec, const Parameter<T>& weight,
                 const Parameter<T>* bias) {
  return conv2d(x, spec, weight.value, bias ? bias->value : Tensor<T>());
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, std::size_t kernel_size, const Tensor<T>& weight) {
  if (kernel_size % 2 != 1) {
    throw ShapeError("conv1d: kernel size must be odd, got " + std::to_string(kernel_size));
  }
  if (!x.defined() || !(x.rank() == 2 || (x.rank() == 3 && x.dim(1) == 1))) {
    throw ShapeError("conv1d: expected [N,C] or [N,1,C] input");
  }
  if (!weight.defined() || weight.shape() != Shape{kernel_size}) {
    throw ShapeError("conv1d: weight must have shape [" + std::to_string(kernel_size) + "]");
  }
  const std::size_t n = x.dim(0);
  const std::size_t len = x.shape().back();
  const long half = static_cast<long>(kernel_size / 2);
  const long c_len = static_cast<long>(len);
  std::vector<T> out(x.numel(), T(0));
  auto in = x.data();
  auto w = weight.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (long c = 0; c < c_len; ++c) {
      T acc = T(0);
      for (long t = -half; t <= half; ++t) {
        const long j = c + t;
        if (j >= 0 && j < c_len) acc += w[t + half] * in[b * len + j];
      }
      out[b * len + c] = acc;
    }
  }
  return Tensor<T>::make_result(
      x.shape(), std::move(out), {x, weight}, [n, len, half, c_len](TensorNode<T>& self) {
        auto& xp = *self.parents[0];
        auto& wp = *self.parents[1];
        std::span<T> dx, dw;
        if (xp.requires_grad) dx = xp.ensure_grad();
        if (wp.requires_grad) dw = wp.ensure_grad();
        for (std::size_t b = 0; b < n; ++b) {
          for (long c = 0; c < c_len; ++c) {
            const T g = self.grad[b * len + c];
            for (long t = -half; t <= half; ++t) {
              const long j = c + t;
              if (j < 0 || j >= c_len) continue;
              if (!dx.empty()) dx[b * len + j] += g * wp.data[t + half];
              if (!dw.empty()) dw[t + half] += g * xp.data[b * len + j];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> bicubic_resize(const Tensor<T>& x, Scale scale) {
  require_rank(x, 4, "bicubic_resize");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = scaled_length(h, scale), ow = scaled_length(w, scale);
  if (oh == 0 || ow == 0) throw ShapeError("bicubic_resize: empty target size");
  const CubicAxis rows = make_cubic_axis(h, oh);
  const CubicAxis cols = make_cubic_axis(w, ow);
  std::vector<T> out(n * c * oh * ow);
  std::vector<double> src(h * w), dst(oh * ow);
  for (std::size_t p = 0; p < n * c; ++p) {
    std::copy_n(x.data().data() + p * h * w, h * w, src.begin());
    cubic_resize_plane(src, h, w, rows, cols, dst);
    std::transform(dst.begin(), dst.end(), out.begin() + p * oh * ow,
                   [](double v) { return static_cast<T>(v); });
  }
  return Tensor<T>::make_result(
      {n, c, oh, ow}, std::move(out), {x}, [n, c, h, w, oh, ow, rows, cols](TensorNode<T>& self) {
        auto dx = self.parents[0]->ensure_grad();
        std::vector<double> tmp(oh * w);
        for (std::size_t p = 0; p < n * c; ++p) {
          const T* g = self.grad.data() + p * oh * ow;
          std::fill(tmp.begin(), tmp.end(), 0.0);
          for (std::size_t x = 0; x < ow; ++x) {
            for (int k = 0; k < 4; ++k) {
              const double wk = cols.weight[4 * x + k];
              const std::size_t src_x = cols.index[4 * x + k];
              for (std::size_t y = 0; y < oh; ++y) tmp[y * w + src_x] += wk * g[y * ow + x];
            }
          }
          T* out = dx.data() + p * h * w;
          for (std::size_t y = 0; y < oh; ++y) {
            for (int k = 0; k < 4; ++k) {
              const double wk = rows.weight[4 * y + k];
              T* row = out + rows.index[4 * y + k] * w;
              const double* in = tmp.data() + y * w;
              for (std::size_t x = 0; x < w; ++x) row[x] += static_cast<T>(wk * in[x]);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  std::vector<T> out(n * c);
  auto in = x.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    T acc = T(0);
    for (std::size_t i = 0; i < hw; ++i) acc += in[p * hw + i];
    out[p] = acc / static_cast<T>(hw);
  }
  return Tensor<T>::make_result({n, c}, std::move(out), {x}, [n, c, hw](TensorNode<T>& self) {
    auto dx = self.parents[0]->ensure_grad();
    for (std::size_t p = 0; p < n * c; ++p) {
      const T g = self.grad[p] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) dx[p * hw + i] += g;
    }
  });
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  require_rank(x, 4, "channel_mean");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c == 0) throw ShapeError("channel_mean: no channels");
  std::vector<T> out(n * hw, T(0));
  auto in = x.data();
  for (std::size_t b = 0; b < n; ++b) {
    T* o = out.data() + b * hw;
    for (std::size_t k = 0; k < c; ++k) {
      const T* src = in.data() + (b * c + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) o[i] += src[i];
    }
    for (std::size_t i = 0; i < hw; ++i) o[i] /= static_cast<T>(c);
  }
  return Tensor<T>::make_result(
      {n, 1, x.dim(2), x.dim(3)}, std::move(out), {x}, [n, c, hw](TensorNode<T>& self) {
        auto dx = self.parents[0]->ensure_grad();
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t k = 0; k < c; ++k) {
            T* d = dx.data() + (b * c + k) * hw;
            for (std::size_t i = 0; i < hw; ++i) d[i] += self.grad[b * hw + i] / static_cast<T>(c);
          }
        }
      });
}

template <typename T>
Tensor<T> global_var_pool(const Tensor<T>& x) {
  require_rank(x, 4, "global_var_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c == 0) throw ShapeError("global_var_pool: no channels");
  std::vector<T> mean(n * hw, T(0));
  std::vector<T> out(n * hw, T(0));
  auto in = x.data();
  const T inv_c = T(1) / static_cast<T>(c);
  for (std::size_t b = 0; b < n; ++b) {
    T* m = mean.data() + b * hw;
    T* o = out.data() + b * hw;
    for (std::size_t k = 0; k < c; ++k) {
      const T* src = in.data() + (b * c + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) m[i] += src[i];
    }
    for (std::size_t i = 0; i < hw; ++i) m[i] *= inv_c;
    for (std::size_t k = 0; k < c; ++k) {
      const T* src = in.data() + (b * c + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T d = src[i] - m[i];
        o[i] += d * d;
      }
    }
    for (std::size_t i = 0; i < hw; ++i) o[i] *= inv_c;
  }
  return Tensor<T>::make_result(
      {n, 1, x.dim(2), x.dim(3)}, std::move(out), {x},
      [n, c, hw, inv_c, mean = std::move(mean)](TensorNode<T>& self) {
        auto& xp = *self.parents[0];
        auto dx = xp.ensure_grad();
        // d var / d x_k = 2 (x_k - mean) / C; the mean term's own derivative
        // cancels because deviations sum to zero.
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t k = 0; k < c; ++k) {
            const std::size_t off = (b * c + k) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              dx[off + i] += self.grad[b * hw + i] * T(2) * inv_c *
                             (xp.data[off + i] - mean[b * hw + i]);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const auto& first = parts.front();
  require_rank(first, 4, "concat_channels");
  const std::size_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::size_t total_c = 0;
  std::vector<std::size_t> channels;
  for (const auto& p : parts) {
    require_rank(p, 4, "concat_channels");
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      throw ShapeError("concat_channels: batch/spatial mismatch " + shape_str(p.shape()) +
                       " vs " + shape_str(first.shape()));
    }
    channels.push_back(p.dim(1));
    total_c += p.dim(1);
  }
  const std::size_t hw = h * w;
  std::vector<T> out(n * total_c * hw);
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t offset = b * total_c * hw;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::size_t len = channels[i] * hw;
      std::copy_n(parts[i].data().data() + b * len, len, out.begin() + offset);
      offset += len;
    }
  }
  return Tensor<T>::make_result(
      {n, total_c, h, w}, std::move(out), parts, [n, hw, total_c, channels](TensorNode<T>& self) {
        for (std::size_t b = 0; b < n; ++b) {
          std::size_t offset = b * total_c * hw;
          for (std::size_t i = 0; i < channels.size(); ++i) {
            const std::size_t len = channels[i] * hw;
            auto& p = *self.parents[i];
            if (p.requires_grad) {
              T* g = p.ensure_grad().data() + b * len;
              for (std::size_t j = 0; j < len; ++j) g[j] += self.grad[offset + j];
            }
            offset += len;
          }
        }
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v < T(0) ? T(0) : v; }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> broadcast_mul_channel(const Tensor<T>& x, const Tensor<T>& mask) {
  require_rank(x, 4, "broadcast_mul_channel");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const bool ok = mask.defined() && mask.numel() == n * c && mask.dim(0) == n &&
                  ((mask.rank() == 2 && mask.dim(1) == c) ||
                   (mask.rank() == 4 && mask.dim(1) == c && mask.dim(2) == 1 && mask.dim(3) == 1));
  if (!ok) {
    throw ShapeError("broadcast_mul_channel: mask " +
                     (mask.defined() ? shape_str(mask.shape()) : std::string("undefined")) +
                     " must be [N,C] for input " + shape_str(x.shape()));
  }
  std::vector<T> out(x.numel());
  for (std::size_t p = 0; p < n * c; ++p) {
    const T m = mask.data()[p];
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = x.data()[p * hw + i] * m;
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, mask}, [n, c, hw](TensorNode<T>& self) {
    auto& xp = *self.parents[0];
    auto& mp = *self.parents[1];
    if (xp.requires_grad) {
      auto g = xp.ensure_grad();
      for (std::size_t p = 0; p < n * c; ++p) {
        for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += self.grad[p * hw + i] * mp.data[p];
      }
    }
    if (mp.requires_grad) {
      auto g = mp.ensure_grad();
      for (std::size_t p = 0; p < n * c; ++p) {
        T acc = T(0);
        for (std::size_t i = 0; i < hw; ++i) acc += self.grad[p * hw + i] * xp.data[p * hw + i];
        g[p] += acc;
      }
    }
  });
}

template <typename T>
Tensor<T> broadcast_mul_spatial(const Tensor<T>& x, const Tensor<T>& mask) {
  require_rank(x, 4, "broadcast_mul_spatial");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (!mask.defined() || mask.rank() != 4 || mask.dim(0) != n || mask.dim(1) != 1 ||
      mask.dim(2) != x.dim(2) || mask.dim(3) != x.dim(3)) {
    throw ShapeError("broadcast_mul_spatial: mask " +
                     (mask.defined() ? shape_str(mask.shape()) : std::string("undefined")) +
                     " must be [N,1,H,W] for input " + shape_str(x.shape()));
  }
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < n; ++b) {
    const T* m = mask.data().data() + b * hw;
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t off = (b * c + k) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[off + i] = x.data()[off + i] * m[i];
    }
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, mask}, [n, c, hw](TensorNode<T>& self) {
    auto& xp = *self.parents[0];
    auto& mp = *self.parents[1];
    std::span<T> gx, gm;
    if (xp.requires_grad) gx = xp.ensure_grad();
    if (mp.requires_grad) gm = mp.ensure_grad();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t off = (b * c + k) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const T g = self.grad[off + i];
          if (!gx.empty()) gx[off + i] += g * mp.data[b * hw + i];
          if (!gm.empty()) gm[b * hw + i] += g * xp.data[off + i];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (auto v : x.data()) acc += v;
  return Tensor<T>::make_result({1}, {acc}, {x}, [](TensorNode<T>& self) {
    auto g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "l1_loss");
  if (pred.numel() == 0) throw ShapeError("l1_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    acc += std::abs(static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]));
  }
  const T inv_n = T(1) / static_cast<T>(pred.numel());
  const T value = static_cast<T>(acc / static_cast<double>(pred.numel()));
  return Tensor<T>::make_result({1}, {value}, {pred, target}, [inv_n](TensorNode<T>& self) {
    auto& pp = *self.parents[0];
    auto& tp = *self.parents[1];
    const T g = self.grad[0] * inv_n;
    for (int side = 0; side < 2; ++side) {
      auto& p = side == 0 ? pp : tp;
      if (!p.requires_grad) continue;
      auto d = p.ensure_grad();
      const T sign_flip = side == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < d.size(); ++i) {
        const T diff = pp.data[i] - tp.data[i];
        const T s = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
        d[i] += sign_flip * s * g;
      }
    }
  });
}

#define MESSFN_INSTANTIATE_OPS(T)                                                           \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvSpec&, const Tensor<T>&,            \
                            const Tensor<T>&);                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvSpec&, const Parameter<T>&,         \
                            const Parameter<T>*);                                           \
  template Tensor<T> conv1d(const Tensor<T>&, std::size_t, const Tensor<T>&);               \
  template Tensor<T> bicubic_resize(const Tensor<T>&, Scale);                               \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                     \
  template Tensor<T> channel_mean(const Tensor<T>&);                                        \
  template Tensor<T> global_var_pool(const Tensor<T>&);                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                        \
  template Tensor<T> sigmoid(const Tensor<T>&);                                             \
  template Tensor<T> tanh(const Tensor<T>&);                                                \
  template Tensor<T> relu(const Tensor<T>&);                                                \
  template Tensor<T> broadcast_mul_channel(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> broadcast_mul_spatial(const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);

MESSFN_INSTANTIATE_OPS(float)
MESSFN_INSTANTIATE_OPS(double)

}  // namespace messfn
