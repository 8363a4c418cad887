#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "perseg/tape.hpp"

namespace perseg::ops {

template <class T>
Value detach(Tape<T>& tp, Value x) {
  return tp.constant(tp.val(x));
}

template <class T>
Value add(Tape<T>& tp, Value a, Value b) {
  const Tensor<T>& A = tp.val(a);
  const Tensor<T>& B = tp.val(b);
  check(A.shape == B.shape, "add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Tensor<T> out = A;
  for (std::int64_t i = 0; i < out.numel(); ++i) out.at(i) += B.at(i);
  bool ng = tp.needs_grad(a) || tp.needs_grad(b);
  return tp.make(std::move(out), ng, [a, b](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <class T>
Value scale(Tape<T>& tp, Value a, double s) {
  Tensor<T> out = tp.val(a);
  for (auto& x : out.v) x = static_cast<T>(x * s);
  return tp.make(std::move(out), tp.needs_grad(a), [a, s](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T> ga = g;
    for (auto& x : ga.v) x = static_cast<T>(x * s);
    t.accumulate(a, ga);
  });
}

// y = x + b per row; x is [R, C], b is [R]. Used for channel-major affines
// where rows are output channels.
template <class T>
Value add_bias_row(Tape<T>& tp, Value x, Value b) {
  const Tensor<T>& X = tp.val(x);
  const Tensor<T>& B = tp.val(b);
  check(X.rank() == 2, "add_bias_row: x must be rank-2");
  check(B.numel() == X.dim(0), "add_bias_row: bias length mismatch");
  Tensor<T> out = X;
  std::int64_t R = X.dim(0), C = X.dim(1);
  for (std::int64_t r = 0; r < R; ++r) {
    T bv = B.at(r);
    for (std::int64_t c = 0; c < C; ++c) out.at2(r, c) += bv;
  }
  bool ng = tp.needs_grad(x) || tp.needs_grad(b);
  return tp.make(std::move(out), ng, [x, b, R, C](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    t.accumulate(x, g);
    if (t.needs_grad(b)) {
      Tensor<T> gb = Tensor<T>::zeros({R});
      for (std::int64_t r = 0; r < R; ++r) {
        T s = T(0);
        for (std::int64_t c = 0; c < C; ++c) s += g.at2(r, c);
        gb.at(r) = s;
      }
      t.accumulate(b, gb);
    }
  });
}

template <class T>
Value matmul(Tape<T>& tp, Value a, Value b) {
  const Tensor<T>& A = tp.val(a);
  const Tensor<T>& B = tp.val(b);
  check(A.rank() == 2 && B.rank() == 2, "matmul: operands must be rank-2");
  check(A.dim(1) == B.dim(0),
        "matmul: inner dimension mismatch " + A.shape_str() + " x " + B.shape_str());
  Tensor<T> out({A.dim(0), B.dim(1)});
  out.mat().noalias() = A.mat() * B.mat();
  bool ng = tp.needs_grad(a) || tp.needs_grad(b);
  return tp.make(std::move(out), ng, [a, b](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& A2 = t.val(a);
    const Tensor<T>& B2 = t.val(b);
    if (t.needs_grad(a)) {
      Tensor<T> ga({A2.dim(0), A2.dim(1)});
      ga.mat().noalias() = g.mat() * B2.mat().transpose();
      t.accumulate(a, ga);
    }
    if (t.needs_grad(b)) {
      Tensor<T> gb({B2.dim(0), B2.dim(1)});
      gb.mat().noalias() = A2.mat().transpose() * g.mat();
      t.accumulate(b, gb);
    }
  });
}

template <class T>
Value transpose2(Tape<T>& tp, Value x) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 2, "transpose2: x must be rank-2");
  Tensor<T> out({X.dim(1), X.dim(0)});
  out.mat().noalias() = X.mat().transpose();
  return tp.make(std::move(out), tp.needs_grad(x), [x](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T> gx({g.dim(1), g.dim(0)});
    gx.mat().noalias() = g.mat().transpose();
    t.accumulate(x, gx);
  });
}

template <class T>
Value reshape(Tape<T>& tp, Value x, std::vector<std::int64_t> shape) {
  const Tensor<T>& X = tp.val(x);
  check(Tensor<T>::numel_of(shape) == X.numel(), "reshape: element count mismatch");
  Tensor<T> out = X;
  out.shape = shape;
  std::vector<std::int64_t> old_shape = X.shape;
  return tp.make(std::move(out), tp.needs_grad(x), [x, old_shape](Tape<T>& t, Value o) {
    Tensor<T> gx = t.grad(o);
    gx.shape = old_shape;
    t.accumulate(x, gx);
  });
}

// Slice along the leading dimension: [N, rest...] -> [rest...].
template <class T>
Value slice_n(Tape<T>& tp, Value x, std::int64_t n) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() >= 2 && n >= 0 && n < X.dim(0), "slice_n: index out of range");
  std::vector<std::int64_t> shape(X.shape.begin() + 1, X.shape.end());
  Tensor<T> out(shape);
  std::int64_t rest = out.numel();
  for (std::int64_t i = 0; i < rest; ++i) out.at(i) = X.at(n * rest + i);
  return tp.make(std::move(out), tp.needs_grad(x), [x, n, rest](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T>& gx = t.grad(x);
    if (!t.needs_grad(x)) return;
    for (std::int64_t i = 0; i < rest; ++i) gx.at(n * rest + i) += g.at(i);
  });
}

// Concatenate along the leading dimension; trailing dims must agree.
template <class T>
Value concat0(Tape<T>& tp, const std::vector<Value>& parts) {
  check(!parts.empty(), "concat0: empty input list");
  const Tensor<T>& first = tp.val(parts[0]);
  std::vector<std::int64_t> tail(first.shape.begin() + 1, first.shape.end());
  std::int64_t lead = 0;
  bool ng = false;
  for (Value p : parts) {
    const Tensor<T>& P = tp.val(p);
    check(P.rank() == first.rank(), "concat0: rank mismatch");
    std::vector<std::int64_t> t2(P.shape.begin() + 1, P.shape.end());
    check(t2 == tail, "concat0: trailing shape mismatch");
    lead += P.dim(0);
    ng = ng || tp.needs_grad(p);
  }
  std::vector<std::int64_t> shape;
  shape.push_back(lead);
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor<T> out(shape);
  std::int64_t off = 0;
  for (Value p : parts) {
    const Tensor<T>& P = tp.val(p);
    for (std::int64_t i = 0; i < P.numel(); ++i) out.at(off + i) = P.at(i);
    off += P.numel();
  }
  std::vector<Value> parts_copy = parts;
  return tp.make(std::move(out), ng, [parts_copy](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    std::int64_t off2 = 0;
    for (Value p : parts_copy) {
      const Tensor<T>& P = t.val(p);
      if (t.needs_grad(p)) {
        Tensor<T> gp(P.shape);
        for (std::int64_t i = 0; i < P.numel(); ++i) gp.at(i) = g.at(off2 + i);
        t.accumulate(p, gp);
      }
      off2 += P.numel();
    }
  });
}

// Softmax over one axis of a rank-2 tensor. axis=1: per-row over columns;
// axis=0: per-column over rows.
template <class T>
Value softmax2(Tape<T>& tp, Value x, int axis) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 2, "softmax2: x must be rank-2");
  check(axis == 0 || axis == 1, "softmax2: axis must be 0 or 1");
  std::int64_t R = X.dim(0), C = X.dim(1);
  Tensor<T> out({R, C});
  auto apply = [&](std::int64_t groups, std::int64_t len, auto get, auto set) {
    for (std::int64_t gidx = 0; gidx < groups; ++gidx) {
      T m = get(gidx, 0);
      for (std::int64_t i = 1; i < len; ++i) m = std::max(m, get(gidx, i));
      T s = T(0);
      for (std::int64_t i = 0; i < len; ++i) s += std::exp(get(gidx, i) - m);
      for (std::int64_t i = 0; i < len; ++i) set(gidx, i, std::exp(get(gidx, i) - m) / s);
    }
  };
  if (axis == 1) {
    apply(
        R, C, [&](std::int64_t r, std::int64_t c) { return X.at2(r, c); },
        [&](std::int64_t r, std::int64_t c, T v) { out.at2(r, c) = v; });
  } else {
    apply(
        C, R, [&](std::int64_t c, std::int64_t r) { return X.at2(r, c); },
        [&](std::int64_t c, std::int64_t r, T v) { out.at2(r, c) = v; });
  }
  return tp.make(std::move(out), tp.needs_grad(x), [x, axis, R, C](Tape<T>& t, Value o) {
    const Tensor<T>& y = t.val(o);
    const Tensor<T>& g = t.grad(o);
    Tensor<T> gx({R, C});
    if (axis == 1) {
      for (std::int64_t r = 0; r < R; ++r) {
        T dot = T(0);
        for (std::int64_t c = 0; c < C; ++c) dot += g.at2(r, c) * y.at2(r, c);
        for (std::int64_t c = 0; c < C; ++c) gx.at2(r, c) = y.at2(r, c) * (g.at2(r, c) - dot);
      }
    } else {
      for (std::int64_t c = 0; c < C; ++c) {
        T dot = T(0);
        for (std::int64_t r = 0; r < R; ++r) dot += g.at2(r, c) * y.at2(r, c);
        for (std::int64_t r = 0; r < R; ++r) gx.at2(r, c) = y.at2(r, c) * (g.at2(r, c) - dot);
      }
    }
    t.accumulate(x, gx);
  });
}

// y_rc = x_rc / sum_c x_rc. Inputs are expected positive (softmax outputs).
template <class T>
Value row_l1_normalize(Tape<T>& tp, Value x) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 2, "row_l1_normalize: x must be rank-2");
  std::int64_t R = X.dim(0), C = X.dim(1);
  Tensor<T> out({R, C});
  auto sums = std::make_shared<std::vector<T>>(static_cast<std::size_t>(R));
  for (std::int64_t r = 0; r < R; ++r) {
    T s = T(0);
    for (std::int64_t c = 0; c < C; ++c) s += X.at2(r, c);
    s = std::max(s, static_cast<T>(1e-30));
    (*sums)[static_cast<std::size_t>(r)] = s;
    for (std::int64_t c = 0; c < C; ++c) out.at2(r, c) = X.at2(r, c) / s;
  }
  return tp.make(std::move(out), tp.needs_grad(x), [x, sums, R, C](Tape<T>& t, Value o) {
    const Tensor<T>& y = t.val(o);
    const Tensor<T>& g = t.grad(o);
    Tensor<T> gx({R, C});
    for (std::int64_t r = 0; r < R; ++r) {
      T dot = T(0);
      for (std::int64_t c = 0; c < C; ++c) dot += g.at2(r, c) * y.at2(r, c);
      T s = (*sums)[static_cast<std::size_t>(r)];
      for (std::int64_t c = 0; c < C; ++c) gx.at2(r, c) = (g.at2(r, c) - dot) / s;
    }
    t.accumulate(x, gx);
  });
}

template <class T>
Value relu(Tape<T>& tp, Value x) {
  Tensor<T> out = tp.val(x);
  for (auto& v : out.v) v = v > T(0) ? v : T(0);
  return tp.make(std::move(out), tp.needs_grad(x), [x](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& X = t.val(x);
    Tensor<T> gx(X.shape);
    for (std::int64_t i = 0; i < X.numel(); ++i) gx.at(i) = X.at(i) > T(0) ? g.at(i) : T(0);
    t.accumulate(x, gx);
  });
}

template <class T>
Value leaky_relu(Tape<T>& tp, Value x, double alpha) {
  Tensor<T> out = tp.val(x);
  const T a = static_cast<T>(alpha);
  for (auto& v : out.v) v = v > T(0) ? v : a * v;
  return tp.make(std::move(out), tp.needs_grad(x), [x, a](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& X = t.val(x);
    Tensor<T> gx(X.shape);
    for (std::int64_t i = 0; i < X.numel(); ++i)
      gx.at(i) = X.at(i) > T(0) ? g.at(i) : a * g.at(i);
    t.accumulate(x, gx);
  });
}

namespace detail {

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad, std::int64_t dil) {
  std::int64_t eff = (k - 1) * dil + 1;
  return (in + 2 * pad - eff) / stride + 1;
}

template <class T>
void im2col(const T* img, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t dil, Tensor<T>& cols) {
  std::int64_t OH = conv_out_dim(H, k, stride, pad, dil);
  std::int64_t OW = conv_out_dim(W, k, stride, pad, dil);
  std::int64_t ohw = OH * OW;
  T* dst = cols.v.data();
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const T* src = img + c * H * W;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          std::int64_t ih = oh * stride - pad + ki * dil;
          if (ih < 0 || ih >= H) {
            for (std::int64_t ow = 0; ow < OW; ++ow) *dst++ = T(0);
            continue;
          }
          for (std::int64_t ow = 0; ow < OW; ++ow) {
            std::int64_t iw = ow * stride - pad + kj * dil;
            *dst++ = (iw >= 0 && iw < W) ? src[ih * W + iw] : T(0);
          }
        }
        (void)ohw;
      }
    }
  }
}

template <class T>
void col2im(const Tensor<T>& cols, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t dil, T* img) {
  std::int64_t OH = conv_out_dim(H, k, stride, pad, dil);
  std::int64_t OW = conv_out_dim(W, k, stride, pad, dil);
  const T* src = cols.v.data();
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        T* dst = img + c * H * W;
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          std::int64_t ih = oh * stride - pad + ki * dil;
          if (ih < 0 || ih >= H) {
            src += OW;
            continue;
          }
          for (std::int64_t ow = 0; ow < OW; ++ow) {
            std::int64_t iw = ow * stride - pad + kj * dil;
            if (iw >= 0 && iw < W) dst[ih * W + iw] += *src;
            ++src;
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: [N, Cin, H, W], w: [Cout, Cin, k, k], b: optional [Cout].
// Lowered to one GEMM per image over im2col patches.
template <class T>
Value conv2d(Tape<T>& tp, Value x, Value w, Value b, std::int64_t stride, std::int64_t pad,
             std::int64_t dilation = 1) {
  const Tensor<T>& X = tp.val(x);
  const Tensor<T>& W4 = tp.val(w);
  check(X.rank() == 4, "conv2d: input must be [N,C,H,W]");
  check(W4.rank() == 4 && W4.dim(2) == W4.dim(3), "conv2d: weight must be [Co,Ci,k,k]");
  check(X.dim(1) == W4.dim(1), "conv2d: channel mismatch");
  std::int64_t N = X.dim(0), Ci = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  std::int64_t Co = W4.dim(0), k = W4.dim(2);
  std::int64_t OH = detail::conv_out_dim(H, k, stride, pad, dilation);
  std::int64_t OW = detail::conv_out_dim(Wd, k, stride, pad, dilation);
  check(OH >= 1 && OW >= 1, "conv2d: output would be empty for input " + X.shape_str());
  std::int64_t ckk = Ci * k * k, ohw = OH * OW;

  bool has_bias = b.valid();
  bool ng = tp.needs_grad(x) || tp.needs_grad(w) || (has_bias && tp.needs_grad(b));
  auto cache = std::make_shared<std::vector<Tensor<T>>>();
  Tensor<T> out({N, Co, OH, OW});
  Tensor<T> cols({ckk, ohw});
  for (std::int64_t n = 0; n < N; ++n) {
    detail::im2col(X.v.data() + n * Ci * H * Wd, Ci, H, Wd, k, stride, pad, dilation, cols);
    typename Tensor<T>::MatMap om(out.v.data() + n * Co * ohw, Co, ohw);
    om.noalias() = W4.as2d(Co, ckk) * cols.mat();
    if (ng && tp.needs_grad(w)) cache->push_back(cols);
  }
  if (has_bias) {
    const Tensor<T>& B = tp.val(b);
    check(B.numel() == Co, "conv2d: bias length mismatch");
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < Co; ++c) {
        T bv = B.at(c);
        T* dst = out.v.data() + (n * Co + c) * ohw;
        for (std::int64_t i = 0; i < ohw; ++i) dst[i] += bv;
      }
  }

  auto back = [x, w, b, has_bias, stride, pad, dilation, N, Ci, H, Wd, Co, k, ckk, ohw,
               cache](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& W2 = t.val(w);
    if (t.needs_grad(w)) {
      Tensor<T> gw(W2.shape);
      auto gwm = gw.as2d(Co, ckk);
      for (std::int64_t n = 0; n < N; ++n) {
        typename Tensor<T>::ConstMatMap gm(g.v.data() + n * Co * ohw, Co, ohw);
        gwm.noalias() += gm * (*cache)[static_cast<std::size_t>(n)].mat().transpose();
      }
      t.accumulate(w, gw);
    }
    if (has_bias && t.needs_grad(b)) {
      Tensor<T> gb({Co});
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < Co; ++c) {
          const T* src = g.v.data() + (n * Co + c) * ohw;
          T s = T(0);
          for (std::int64_t i = 0; i < ohw; ++i) s += src[i];
          gb.at(c) += s;
        }
      t.accumulate(b, gb);
    }
    if (t.needs_grad(x)) {
      Tensor<T> gx({N, Ci, H, Wd});
      Tensor<T> dcols({ckk, ohw});
      for (std::int64_t n = 0; n < N; ++n) {
        typename Tensor<T>::ConstMatMap gm(g.v.data() + n * Co * ohw, Co, ohw);
        dcols.mat().noalias() = W2.as2d(Co, ckk).transpose() * gm;
        detail::col2im(dcols, Ci, H, Wd, k, stride, pad, dilation,
                       gx.v.data() + n * Ci * H * Wd);
      }
      t.accumulate(x, gx);
    }
  };
  if (!(ng && tp.grad_enabled)) cache->clear();
  return tp.make(std::move(out), ng, back);
}

template <class T>
Value maxpool2d(Tape<T>& tp, Value x, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 4, "maxpool2d: input must be [N,C,H,W]");
  std::int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  std::int64_t OH = detail::conv_out_dim(H, k, stride, pad, 1);
  std::int64_t OW = detail::conv_out_dim(W, k, stride, pad, 1);
  check(OH >= 1 && OW >= 1, "maxpool2d: output would be empty");
  Tensor<T> out({N, C, OH, OW});
  auto arg = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(N * C * OH * OW));
  std::int64_t oi = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* plane = X.v.data() + (n * C + c) * H * W;
      for (std::int64_t oh = 0; oh < OH; ++oh)
        for (std::int64_t ow = 0; ow < OW; ++ow, ++oi) {
          T best = T(0);
          std::int64_t besti = -1;
          for (std::int64_t ki = 0; ki < k; ++ki) {
            std::int64_t ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= H) continue;
            for (std::int64_t kj = 0; kj < k; ++kj) {
              std::int64_t iw = ow * stride - pad + kj;
              if (iw < 0 || iw >= W) continue;
              T v = plane[ih * W + iw];
              if (besti < 0 || v > best) {
                best = v;
                besti = ih * W + iw;
              }
            }
          }
          check(besti >= 0, "maxpool2d: window has no valid input");
          out.at(oi) = best;
          (*arg)[static_cast<std::size_t>(oi)] = (n * C + c) * H * W + besti;
        }
    }
  return tp.make(std::move(out), tp.needs_grad(x), [x, arg](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T> gx(t.val(x).shape);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      gx.at((*arg)[static_cast<std::size_t>(i)]) += g.at(i);
    t.accumulate(x, gx);
  });
}

template <class T>
Value adaptive_avg_pool2d(Tape<T>& tp, Value x, std::int64_t oh, std::int64_t ow) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 4, "adaptive_avg_pool2d: input must be [N,C,H,W]");
  std::int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  check(oh >= 1 && ow >= 1, "adaptive_avg_pool2d: bad output size");
  auto lo = [](std::int64_t i, std::int64_t in, std::int64_t out) { return i * in / out; };
  auto hi = [](std::int64_t i, std::int64_t in, std::int64_t out) {
    return ((i + 1) * in + out - 1) / out;
  };
  Tensor<T> out({N, C, oh, ow});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* plane = X.v.data() + (n * C + c) * H * W;
      T* op = out.v.data() + (n * C + c) * oh * ow;
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          std::int64_t h0 = lo(i, H, oh), h1 = hi(i, H, oh);
          std::int64_t w0 = lo(j, W, ow), w1 = hi(j, W, ow);
          T s = T(0);
          for (std::int64_t a = h0; a < h1; ++a)
            for (std::int64_t b2 = w0; b2 < w1; ++b2) s += plane[a * W + b2];
          op[i * ow + j] = s / static_cast<T>((h1 - h0) * (w1 - w0));
        }
    }
  return tp.make(std::move(out), tp.needs_grad(x), [x, oh, ow, lo, hi](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& X2 = t.val(x);
    std::int64_t N = X2.dim(0), C = X2.dim(1), H = X2.dim(2), W = X2.dim(3);
    Tensor<T> gx(X2.shape);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        T* plane = gx.v.data() + (n * C + c) * H * W;
        const T* gp = g.v.data() + (n * C + c) * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) {
            std::int64_t h0 = lo(i, H, oh), h1 = hi(i, H, oh);
            std::int64_t w0 = lo(j, W, ow), w1 = hi(j, W, ow);
            T gv = gp[i * ow + j] / static_cast<T>((h1 - h0) * (w1 - w0));
            for (std::int64_t a = h0; a < h1; ++a)
              for (std::int64_t b2 = w0; b2 < w1; ++b2) plane[a * W + b2] += gv;
          }
      }
    t.accumulate(x, gx);
  });
}

// Per-channel scale and shift on [N,C,H,W].
template <class T>
Value channel_affine(Tape<T>& tp, Value x, Value gamma, Value beta) {
  const Tensor<T>& X = tp.val(x);
  const Tensor<T>& G = tp.val(gamma);
  const Tensor<T>& B = tp.val(beta);
  check(X.rank() == 4, "channel_affine: input must be [N,C,H,W]");
  std::int64_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
  check(G.numel() == C && B.numel() == C, "channel_affine: parameter length mismatch");
  Tensor<T> out(X.shape);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* src = X.v.data() + (n * C + c) * HW;
      T* dst = out.v.data() + (n * C + c) * HW;
      T gv = G.at(c), bv = B.at(c);
      for (std::int64_t i = 0; i < HW; ++i) dst[i] = src[i] * gv + bv;
    }
  bool ng = tp.needs_grad(x) || tp.needs_grad(gamma) || tp.needs_grad(beta);
  return tp.make(std::move(out), ng, [x, gamma, beta, N, C, HW](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& X2 = t.val(x);
    const Tensor<T>& G2 = t.val(gamma);
    if (t.needs_grad(x)) {
      Tensor<T> gx(X2.shape);
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
          const T* gp = g.v.data() + (n * C + c) * HW;
          T* dst = gx.v.data() + (n * C + c) * HW;
          T gv = G2.at(c);
          for (std::int64_t i = 0; i < HW; ++i) dst[i] = gp[i] * gv;
        }
      t.accumulate(x, gx);
    }
    if (t.needs_grad(gamma)) {
      Tensor<T> gg({C});
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
          const T* gp = g.v.data() + (n * C + c) * HW;
          const T* xp = X2.v.data() + (n * C + c) * HW;
          T s = T(0);
          for (std::int64_t i = 0; i < HW; ++i) s += gp[i] * xp[i];
          gg.at(c) += s;
        }
      t.accumulate(gamma, gg);
    }
    if (t.needs_grad(beta)) {
      Tensor<T> gb({C});
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
          const T* gp = g.v.data() + (n * C + c) * HW;
          T s = T(0);
          for (std::int64_t i = 0; i < HW; ++i) s += gp[i];
          gb.at(c) += s;
        }
      t.accumulate(beta, gb);
    }
  });
}

namespace detail {

// align_corners=false sampling grid.
struct LerpAxis {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> w;
  LerpAxis(std::int64_t in, std::int64_t out) {
    i0.resize(static_cast<std::size_t>(out));
    i1.resize(static_cast<std::size_t>(out));
    w.resize(static_cast<std::size_t>(out));
    double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      if (src <= 0.0) {
        i0[o] = i1[o] = 0;
        w[o] = 0.0;
      } else if (src >= static_cast<double>(in - 1)) {
        i0[o] = i1[o] = in - 1;
        w[o] = 0.0;
      } else {
        std::int64_t f = static_cast<std::int64_t>(src);
        i0[o] = f;
        i1[o] = f + 1;
        w[o] = src - static_cast<double>(f);
      }
    }
  }
};

}  // namespace detail

template <class T>
Value bilinear_resize(Tape<T>& tp, Value x, std::int64_t oh, std::int64_t ow) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 4, "bilinear_resize: input must be [N,C,H,W]");
  std::int64_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  check(oh >= 1 && ow >= 1, "bilinear_resize: bad output size");
  auto ay = std::make_shared<detail::LerpAxis>(H, oh);
  auto ax = std::make_shared<detail::LerpAxis>(W, ow);
  Tensor<T> out({N, C, oh, ow});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* plane = X.v.data() + (n * C + c) * H * W;
      T* dst = out.v.data() + (n * C + c) * oh * ow;
      for (std::int64_t i = 0; i < oh; ++i) {
        std::int64_t r0 = ay->i0[i], r1 = ay->i1[i];
        double wh = ay->w[i];
        for (std::int64_t j = 0; j < ow; ++j) {
          std::int64_t c0 = ax->i0[j], c1 = ax->i1[j];
          double ww = ax->w[j];
          double v00 = plane[r0 * W + c0], v01 = plane[r0 * W + c1];
          double v10 = plane[r1 * W + c0], v11 = plane[r1 * W + c1];
          dst[i * ow + j] = static_cast<T>((1 - wh) * ((1 - ww) * v00 + ww * v01) +
                                           wh * ((1 - ww) * v10 + ww * v11));
        }
      }
    }
  return tp.make(std::move(out), tp.needs_grad(x), [x, ay, ax, oh, ow](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& X2 = t.val(x);
    std::int64_t N = X2.dim(0), C = X2.dim(1), H = X2.dim(2), W = X2.dim(3);
    Tensor<T> gx(X2.shape);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        T* plane = gx.v.data() + (n * C + c) * H * W;
        const T* gp = g.v.data() + (n * C + c) * oh * ow;
        for (std::int64_t i = 0; i < oh; ++i) {
          std::int64_t r0 = ay->i0[i], r1 = ay->i1[i];
          double wh = ay->w[i];
          for (std::int64_t j = 0; j < ow; ++j) {
            std::int64_t c0 = ax->i0[j], c1 = ax->i1[j];
            double ww = ax->w[j];
            double gv = gp[i * ow + j];
            plane[r0 * W + c0] += static_cast<T>((1 - wh) * (1 - ww) * gv);
            plane[r0 * W + c1] += static_cast<T>((1 - wh) * ww * gv);
            plane[r1 * W + c0] += static_cast<T>(wh * (1 - ww) * gv);
            plane[r1 * W + c1] += static_cast<T>(wh * ww * gv);
          }
        }
      }
    t.accumulate(x, gx);
  });
}

// [N,C,H,W] -> [C, N*H*W]; column index is n*H*W + hw. Lets the attention
// affines run as single GEMMs over a whole batch.
template <class T>
Value to_channel_major(Tape<T>& tp, Value x) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 4, "to_channel_major: input must be [N,C,H,W]");
  std::int64_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
  Tensor<T> out({C, N * HW});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* src = X.v.data() + (n * C + c) * HW;
      T* dst = out.v.data() + c * N * HW + n * HW;
      for (std::int64_t i = 0; i < HW; ++i) dst[i] = src[i];
    }
  return tp.make(std::move(out), tp.needs_grad(x), [x, N, C, HW](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T> gx(t.val(x).shape);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const T* src = g.v.data() + c * N * HW + n * HW;
        T* dst = gx.v.data() + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) dst[i] = src[i];
      }
    t.accumulate(x, gx);
  });
}

template <class T>
Value from_channel_major(Tape<T>& tp, Value x, std::int64_t N, std::int64_t C, std::int64_t H,
                         std::int64_t W) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 2 && X.dim(0) == C && X.dim(1) == N * H * W,
        "from_channel_major: shape mismatch");
  std::int64_t HW = H * W;
  Tensor<T> out({N, C, H, W});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* src = X.v.data() + c * N * HW + n * HW;
      T* dst = out.v.data() + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) dst[i] = src[i];
    }
  return tp.make(std::move(out), tp.needs_grad(x), [x, N, C, HW](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T> gx(t.val(x).shape);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const T* src = g.v.data() + (n * C + c) * HW;
        T* dst = gx.v.data() + c * N * HW + n * HW;
        for (std::int64_t i = 0; i < HW; ++i) dst[i] = src[i];
      }
    t.accumulate(x, gx);
  });
}

template <class T>
Value softmax_channel(Tape<T>& tp, Value x) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 4, "softmax_channel: input must be [N,C,H,W]");
  std::int64_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
  Tensor<T> out(X.shape);
  for (std::int64_t n = 0; n < N; ++n) {
    const T* src = X.v.data() + n * C * HW;
    T* dst = out.v.data() + n * C * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      T m = src[i];
      for (std::int64_t c = 1; c < C; ++c) m = std::max(m, src[c * HW + i]);
      T s = T(0);
      for (std::int64_t c = 0; c < C; ++c) s += std::exp(src[c * HW + i] - m);
      for (std::int64_t c = 0; c < C; ++c) dst[c * HW + i] = std::exp(src[c * HW + i] - m) / s;
    }
  }
  return tp.make(std::move(out), tp.needs_grad(x), [x, N, C, HW](Tape<T>& t, Value o) {
    const Tensor<T>& y = t.val(o);
    const Tensor<T>& g = t.grad(o);
    Tensor<T> gx(y.shape);
    for (std::int64_t n = 0; n < N; ++n) {
      const T* yp = y.v.data() + n * C * HW;
      const T* gp = g.v.data() + n * C * HW;
      T* dst = gx.v.data() + n * C * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        T dot = T(0);
        for (std::int64_t c = 0; c < C; ++c) dot += gp[c * HW + i] * yp[c * HW + i];
        for (std::int64_t c = 0; c < C; ++c)
          dst[c * HW + i] = yp[c * HW + i] * (gp[c * HW + i] - dot);
      }
    }
    t.accumulate(x, gx);
  });
}

// Shannon entropy per pixel over the channel axis, natural log, with the
// 0*log(0) = 0 convention. Input must be a normalized probability map.
template <class T>
Value entropy_channel(Tape<T>& tp, Value probs) {
  const Tensor<T>& P = tp.val(probs);
  check(P.rank() == 4, "entropy_channel: input must be [N,C,H,W]");
  std::int64_t N = P.dim(0), C = P.dim(1), HW = P.dim(2) * P.dim(3);
  const T eps = static_cast<T>(1e-12);
  for (std::int64_t n = 0; n < N; ++n) {
    const T* src = P.v.data() + n * C * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      T s = T(0);
      for (std::int64_t c = 0; c < C; ++c) s += src[c * HW + i];
      if (std::abs(static_cast<double>(s) - 1.0) > 1e-4)
        fail("entropy_channel: probability map not normalized (pixel sum " +
             std::to_string(static_cast<double>(s)) + ")");
    }
  }
  Tensor<T> out({N, std::int64_t(1), P.dim(2), P.dim(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    const T* src = P.v.data() + n * C * HW;
    T* dst = out.v.data() + n * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      T e = T(0);
      for (std::int64_t c = 0; c < C; ++c) {
        T p = src[c * HW + i];
        if (p > eps) e -= p * std::log(p);
      }
      dst[i] = e;
    }
  }
  return tp.make(std::move(out), tp.needs_grad(probs), [probs, N, C, HW, eps](Tape<T>& t,
                                                                              Value o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& P2 = t.val(probs);
    Tensor<T> gp(P2.shape);
    for (std::int64_t n = 0; n < N; ++n) {
      const T* src = P2.v.data() + n * C * HW;
      const T* gv = g.v.data() + n * HW;
      T* dst = gp.v.data() + n * C * HW;
      for (std::int64_t i = 0; i < HW; ++i)
        for (std::int64_t c = 0; c < C; ++c) {
          T p = src[c * HW + i];
          dst[c * HW + i] = p > eps ? -gv[i] * (std::log(p) + T(1)) : T(0);
        }
    }
    t.accumulate(probs, gp);
  });
}

// Per-class self-information map: y_c = -p_c * log(p_c).
template <class T>
Value selfinfo_channel(Tape<T>& tp, Value probs) {
  const Tensor<T>& P = tp.val(probs);
  check(P.rank() == 4, "selfinfo_channel: input must be [N,C,H,W]");
  const T eps = static_cast<T>(1e-12);
  Tensor<T> out(P.shape);
  for (std::int64_t i = 0; i < P.numel(); ++i) {
    T p = P.at(i);
    out.at(i) = p > eps ? -p * std::log(p) : T(0);
  }
  return tp.make(std::move(out), tp.needs_grad(probs), [probs, eps](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    const Tensor<T>& P2 = t.val(probs);
    Tensor<T> gp(P2.shape);
    for (std::int64_t i = 0; i < P2.numel(); ++i) {
      T p = P2.at(i);
      gp.at(i) = p > eps ? -g.at(i) * (std::log(p) + T(1)) : T(0);
    }
    t.accumulate(probs, gp);
  });
}

template <class T>
struct SegCE {
  Value loss;
  std::int64_t valid_pixels = 0;
};

// Pixel-mean cross entropy over softmax(logits) with an ignore label.
// Targets must be in {0..C-1, ignore}. All-ignored batches yield a constant
// zero with no gradient; callers are expected to log that case.
template <class T>
SegCE<T> softmax_xent_ignore(Tape<T>& tp, Value logits, const std::vector<std::int32_t>& target,
                             std::int32_t ignore_label = 255) {
  const Tensor<T>& L = tp.val(logits);
  check(L.rank() == 4, "softmax_xent_ignore: logits must be [N,C,H,W]");
  std::int64_t N = L.dim(0), C = L.dim(1), HW = L.dim(2) * L.dim(3);
  check(static_cast<std::int64_t>(target.size()) == N * HW,
        "softmax_xent_ignore: target size mismatch");
  for (std::int32_t v : target)
    check(v == ignore_label || (v >= 0 && v < C),
          "softmax_xent_ignore: invalid label value " + std::to_string(v));

  std::int64_t valid = 0;
  double total = 0.0;
  auto probs = std::make_shared<Tensor<T>>(L.shape);
  for (std::int64_t n = 0; n < N; ++n) {
    const T* src = L.v.data() + n * C * HW;
    T* pp = probs->v.data() + n * C * HW;
    for (std::int64_t i = 0; i < HW; ++i) {
      T m = src[i];
      for (std::int64_t c = 1; c < C; ++c) m = std::max(m, src[c * HW + i]);
      T s = T(0);
      for (std::int64_t c = 0; c < C; ++c) s += std::exp(src[c * HW + i] - m);
      for (std::int64_t c = 0; c < C; ++c) pp[c * HW + i] = std::exp(src[c * HW + i] - m) / s;
      std::int32_t y = target[static_cast<std::size_t>(n * HW + i)];
      if (y == ignore_label) continue;
      ++valid;
      total += -(static_cast<double>(src[y * HW + i]) - static_cast<double>(m) -
                 std::log(static_cast<double>(s)));
    }
  }
  if (valid == 0) return {tp.constant(Tensor<T>::scalar(T(0))), 0};

  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(valid)));
  auto tgt = std::make_shared<std::vector<std::int32_t>>(target);
  Value loss = tp.make(std::move(out), tp.needs_grad(logits),
                       [logits, probs, tgt, ignore_label, N, C, HW, valid](Tape<T>& t, Value o) {
                         T gscale = t.grad(o).at(0) / static_cast<T>(valid);
                         Tensor<T> gl(probs->shape);
                         for (std::int64_t n = 0; n < N; ++n) {
                           const T* pp = probs->v.data() + n * C * HW;
                           T* dst = gl.v.data() + n * C * HW;
                           for (std::int64_t i = 0; i < HW; ++i) {
                             std::int32_t y = (*tgt)[static_cast<std::size_t>(n * HW + i)];
                             if (y == ignore_label) continue;
                             for (std::int64_t c = 0; c < C; ++c)
                               dst[c * HW + i] = gscale * pp[c * HW + i];
                             dst[y * HW + i] -= gscale;
                           }
                         }
                         t.accumulate(logits, gl);
                       });
  return {loss, valid};
}

// Mean binary cross entropy on logits against a constant label in [0,1].
template <class T>
Value bce_logits_const(Tape<T>& tp, Value z, double label) {
  const Tensor<T>& Z = tp.val(z);
  check(Z.numel() > 0, "bce_logits_const: empty input");
  check(label >= 0.0 && label <= 1.0, "bce_logits_const: label must be in [0,1]");
  double total = 0.0;
  for (std::int64_t i = 0; i < Z.numel(); ++i) {
    double zi = static_cast<double>(Z.at(i));
    double sp = zi > 0.0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    total += sp - label * zi;
  }
  std::int64_t n = Z.numel();
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  return tp.make(std::move(out), tp.needs_grad(z), [z, label, n](Tape<T>& t, Value o) {
    T gscale = t.grad(o).at(0) / static_cast<T>(n);
    const Tensor<T>& Z2 = t.val(z);
    Tensor<T> gz(Z2.shape);
    for (std::int64_t i = 0; i < n; ++i) {
      double zi = static_cast<double>(Z2.at(i));
      double sig = 1.0 / (1.0 + std::exp(-zi));
      gz.at(i) = gscale * static_cast<T>(sig - label);
    }
    t.accumulate(z, gz);
  });
}

template <class T>
Value sum_all(Tape<T>& tp, Value x) {
  const Tensor<T>& X = tp.val(x);
  double s = 0.0;
  for (const T& v : X.v) s += static_cast<double>(v);
  return tp.make(Tensor<T>::scalar(static_cast<T>(s)), tp.needs_grad(x),
                 [x](Tape<T>& t, Value o) {
                   T g = t.grad(o).at(0);
                   Tensor<T> gx(t.val(x).shape);
                   std::fill(gx.v.begin(), gx.v.end(), g);
                   t.accumulate(x, gx);
                 });
}

template <class T>
Value mean_all(Tape<T>& tp, Value x) {
  const Tensor<T>& X = tp.val(x);
  check(X.numel() > 0, "mean_all: empty input");
  double s = 0.0;
  for (const T& v : X.v) s += static_cast<double>(v);
  std::int64_t n = X.numel();
  return tp.make(Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(n))),
                 tp.needs_grad(x), [x, n](Tape<T>& t, Value o) {
                   T g = t.grad(o).at(0) / static_cast<T>(n);
                   Tensor<T> gx(t.val(x).shape);
                   std::fill(gx.v.begin(), gx.v.end(), g);
                   t.accumulate(x, gx);
                 });
}

// Row means: [R, C] -> [R, 1].
template <class T>
Value mean_cols(Tape<T>& tp, Value x) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 2 && X.dim(1) > 0, "mean_cols: x must be rank-2 and non-empty");
  std::int64_t R = X.dim(0), C = X.dim(1);
  Tensor<T> out({R, std::int64_t(1)});
  for (std::int64_t r = 0; r < R; ++r) {
    T s = T(0);
    for (std::int64_t c = 0; c < C; ++c) s += X.at2(r, c);
    out.at(r) = s / static_cast<T>(C);
  }
  return tp.make(std::move(out), tp.needs_grad(x), [x, R, C](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T> gx({R, C});
    for (std::int64_t r = 0; r < R; ++r) {
      T gv = g.at(r) / static_cast<T>(C);
      for (std::int64_t c = 0; c < C; ++c) gx.at2(r, c) = gv;
    }
    t.accumulate(x, gx);
  });
}

// [R, 1] -> [R, cols] by repetition.
template <class T>
Value broadcast_cols(Tape<T>& tp, Value x, std::int64_t cols) {
  const Tensor<T>& X = tp.val(x);
  check(X.rank() == 2 && X.dim(1) == 1, "broadcast_cols: x must be [R,1]");
  std::int64_t R = X.dim(0);
  Tensor<T> out({R, cols});
  for (std::int64_t r = 0; r < R; ++r)
    for (std::int64_t c = 0; c < cols; ++c) out.at2(r, c) = X.at(r);
  return tp.make(std::move(out), tp.needs_grad(x), [x, R, cols](Tape<T>& t, Value o) {
    const Tensor<T>& g = t.grad(o);
    Tensor<T> gx({R, std::int64_t(1)});
    for (std::int64_t r = 0; r < R; ++r) {
      T s = T(0);
      for (std::int64_t c = 0; c < cols; ++c) s += g.at2(r, c);
      gx.at(r) = s;
    }
    t.accumulate(x, gx);
  });
}

}  // namespace perseg::ops
