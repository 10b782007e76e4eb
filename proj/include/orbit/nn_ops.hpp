#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "orbit/autodiff.hpp"
#include "orbit/tensor.hpp"

namespace orbit {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

namespace detail {

// Unfolds one NCHW item into a [Cin*kh*kw, Ho*Wo] matrix (zero padding).
template <typename T>
void im2col(const T* x, std::int64_t cin, std::int64_t h, std::int64_t w, int kh, int kw, int stride, int pad,
            std::int64_t ho, std::int64_t wo, T* col) {
    for (std::int64_t c = 0; c < cin; ++c) {
        const T* plane = x + c * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* row = col + ((c * kh + ki) * kw + kj) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) {
                        std::fill(row + oy * wo, row + (oy + 1) * wo, T(0));
                        continue;
                    }
                    const T* src = plane + iy * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kj;
                        row[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Transpose of im2col: scatter-adds a column matrix back into an image.
template <typename T>
void col2im(const T* col, std::int64_t cin, std::int64_t h, std::int64_t w, int kh, int kw, int stride, int pad,
            std::int64_t ho, std::int64_t wo, T* x) {
    for (std::int64_t c = 0; c < cin; ++c) {
        T* plane = x + c * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* row = col + ((c * kh + ki) * kw + kj) * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const std::int64_t iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    T* dst = plane + iy * w;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const std::int64_t ix = ox * stride - pad + kj;
                        if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2-D convolution, zero padding, square stride. weight is [Cout,Cin,kh,kw],
// bias is [Cout] or empty. im2col + GEMM per batch item; the backward pass
// re-runs im2col instead of caching it, trading ~15% compute for not holding
// every unfolded activation in memory.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride = 1, int pad = 0) {
    const auto& xs = x->value.shape();
    const auto& ws = weight->value.shape();
    if (xs.size() != 4 || ws.size() != 4) throw ShapeError("conv2d: expected 4-D input and weight");
    if (xs[1] != ws[1]) throw ShapeError("conv2d: channel mismatch");
    const std::int64_t n = xs[0], cin = xs[1], h = xs[2], w = xs[3];
    const std::int64_t cout = ws[0];
    const int kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
    const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wo = (w + 2 * pad - kw) / stride + 1;
    if (ho < 1 || wo < 1) throw ShapeError("conv2d: kernel larger than padded input");
    const std::int64_t k = cin * kh * kw;
    const std::int64_t l = ho * wo;
    const bool has_bias = bias && bias->value.numel() > 0;

    Tensor<T> y({n, cout, ho, wo});
    {
        CMapRM<T> wmat(weight->value.data(), cout, k);
#pragma omp parallel for schedule(static) if (n > 1)
        for (std::int64_t item = 0; item < n; ++item) {
            std::vector<T> col(static_cast<std::size_t>(k * l));
            detail::im2col(x->value.data() + item * cin * h * w, cin, h, w, kh, kw, stride, pad, ho, wo, col.data());
            CMapRM<T> colmat(col.data(), k, l);
            MapRM<T> ymat(y.data() + item * cout * l, cout, l);
            ymat.noalias() = wmat * colmat;
            if (has_bias) {
                for (std::int64_t c = 0; c < cout; ++c) ymat.row(c).array() += bias->value[c];
            }
        }
    }

    return make_op<T>(std::move(y), {x, weight, bias ? bias : x},
                      [x, weight, bias, has_bias, n, cin, h, w, kh, kw, stride, pad, ho, wo, k, l, cout](VarNode<T>& out) {
                          const bool need_dx = x->requires_grad;
                          const bool need_dw = weight->requires_grad;
                          const bool need_db = has_bias && bias->requires_grad;
                          if (need_dx) x->ensure_grad();
                          if (need_dw) weight->ensure_grad();
                          if (need_db) bias->ensure_grad();

                          // Per-item weight-gradient partials, reduced in batch order
                          // afterwards so the result never depends on thread timing.
                          std::vector<T> dw_parts;
                          if (need_dw) dw_parts.assign(static_cast<std::size_t>(n * cout * k), T(0));

                          CMapRM<T> wmat(weight->value.data(), cout, k);
#pragma omp parallel for schedule(static) if (n > 1)
                          for (std::int64_t item = 0; item < n; ++item) {
                              CMapRM<T> dymat(out.grad.data() + item * cout * l, cout, l);
                              std::vector<T> col;
                              if (need_dw) {
                                  col.resize(static_cast<std::size_t>(k * l));
                                  detail::im2col(x->value.data() + item * cin * h * w, cin, h, w, kh, kw, stride, pad,
                                                 ho, wo, col.data());
                                  CMapRM<T> colmat(col.data(), k, l);
                                  MapRM<T> dwmat(dw_parts.data() + item * cout * k, cout, k);
                                  dwmat.noalias() = dymat * colmat.transpose();
                              }
                              if (need_dx) {
                                  std::vector<T> colgrad(static_cast<std::size_t>(k * l));
                                  MapRM<T> cgmat(colgrad.data(), k, l);
                                  cgmat.noalias() = wmat.transpose() * dymat;
                                  detail::col2im(colgrad.data(), cin, h, w, kh, kw, stride, pad, ho, wo,
                                                 x->grad.data() + item * cin * h * w);
                              }
                          }
                          if (need_dw) {
                              MapRM<T> dwacc(weight->grad.data(), cout, k);
                              for (std::int64_t item = 0; item < n; ++item) {
                                  dwacc.noalias() += CMapRM<T>(dw_parts.data() + item * cout * k, cout, k);
                              }
                          }
                          if (need_db) {
                              for (std::int64_t item = 0; item < n; ++item)
                                  for (std::int64_t c = 0; c < cout; ++c) {
                                      const T* dy = out.grad.data() + (item * cout + c) * l;
                                      T s = T(0);
                                      for (std::int64_t i = 0; i < l; ++i) s += dy[i];
                                      bias->grad[c] += s;
                                  }
                          }
                      });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int stride = 1, int pad = 0) {
    return conv2d(x, weight, Var<T>(), stride, pad);
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> y(x->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = x->value[i] > T(0) ? x->value[i] : T(0);
    return make_op<T>(std::move(y), {x}, [x](VarNode<T>& out) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < out.grad.numel(); ++i)
            if (out.value[i] > T(0)) x->grad[i] += out.grad[i];
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> y(x->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = T(1) / (T(1) + std::exp(-x->value[i]));
    return make_op<T>(std::move(y), {x}, [x](VarNode<T>& out) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < out.grad.numel(); ++i)
            x->grad[i] += out.grad[i] * out.value[i] * (T(1) - out.value[i]);
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("add: shape mismatch");
    Tensor<T> y(a->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] + b->value[i];
    return make_op<T>(std::move(y), {a, b}, [a, b](VarNode<T>& out) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < out.grad.numel(); ++i) a->grad[i] += out.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < out.grad.numel(); ++i) b->grad[i] += out.grad[i];
        }
    });
}

// y = x * scale_c + shift_c per channel, constants. Carries input
// normalization without introducing trainable parameters.
template <typename T>
Var<T> channel_affine(const Var<T>& x, std::vector<T> scale, std::vector<T> shift) {
    const auto& s = x->value.shape();
    if (s.size() != 4 || static_cast<std::size_t>(s[1]) != scale.size() || scale.size() != shift.size())
        throw ShapeError("channel_affine: bad channel count");
    const std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    Tensor<T> y(s);
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t ic = 0; ic < c; ++ic) {
            const T* src = x->value.data() + (in * c + ic) * hw;
            T* dst = y.data() + (in * c + ic) * hw;
            const T sc = scale[static_cast<std::size_t>(ic)];
            const T sh = shift[static_cast<std::size_t>(ic)];
            for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] * sc + sh;
        }
    return make_op<T>(std::move(y), {x}, [x, scale, n, c, hw](VarNode<T>& out) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t in = 0; in < n; ++in)
            for (std::int64_t ic = 0; ic < c; ++ic) {
                const T* dy = out.grad.data() + (in * c + ic) * hw;
                T* dx = x->grad.data() + (in * c + ic) * hw;
                const T sc = scale[static_cast<std::size_t>(ic)];
                for (std::int64_t i = 0; i < hw; ++i) dx[i] += dy[i] * sc;
            }
    });
}

// Batch normalization state that persists across steps (running statistics).
template <typename T>
struct BatchNormStats {
    Tensor<T> running_mean;
    Tensor<T> running_var;
    explicit BatchNormStats(std::int64_t channels)
        : running_mean({channels}), running_var(Tensor<T>::full({channels}, T(1))) {}
};

// Train mode normalizes by batch statistics and updates the running ones
// (momentum 0.1, unbiased running variance). Eval mode normalizes by the
// stored running statistics and is deterministic.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  const std::shared_ptr<BatchNormStats<T>>& stats, bool training, T momentum = T(0.1),
                  T eps = T(1e-5)) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw ShapeError("batch_norm: expected NCHW");
    const std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
    const std::int64_t cnt = n * hw;
    if (s[1] != gamma->value.numel() || s[1] != beta->value.numel())
        throw ShapeError("batch_norm: channel mismatch");

    Tensor<T> y(s);
    auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
    auto invstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));

    if (training) {
        for (std::int64_t ic = 0; ic < c; ++ic) {
            T sum = T(0), sq = T(0);
            for (std::int64_t in = 0; in < n; ++in) {
                const T* src = x->value.data() + (in * c + ic) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    sum += src[i];
                    sq += src[i] * src[i];
                }
            }
            const T mu = sum / static_cast<T>(cnt);
            T var = sq / static_cast<T>(cnt) - mu * mu;
            var = std::max(var, T(0));
            (*mean)[static_cast<std::size_t>(ic)] = mu;
            (*invstd)[static_cast<std::size_t>(ic)] = T(1) / std::sqrt(var + eps);
            const T unbiased = cnt > 1 ? var * static_cast<T>(cnt) / static_cast<T>(cnt - 1) : var;
            stats->running_mean[ic] = (T(1) - momentum) * stats->running_mean[ic] + momentum * mu;
            stats->running_var[ic] = (T(1) - momentum) * stats->running_var[ic] + momentum * unbiased;
        }
    } else {
        for (std::int64_t ic = 0; ic < c; ++ic) {
            (*mean)[static_cast<std::size_t>(ic)] = stats->running_mean[ic];
            (*invstd)[static_cast<std::size_t>(ic)] = T(1) / std::sqrt(stats->running_var[ic] + eps);
        }
    }

    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t ic = 0; ic < c; ++ic) {
            const T* src = x->value.data() + (in * c + ic) * hw;
            T* dst = y.data() + (in * c + ic) * hw;
            const T mu = (*mean)[static_cast<std::size_t>(ic)];
            const T is = (*invstd)[static_cast<std::size_t>(ic)];
            const T g = gamma->value[ic], b = beta->value[ic];
            for (std::int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * is * g + b;
        }

    return make_op<T>(std::move(y), {x, gamma, beta},
                      [x, gamma, beta, mean, invstd, training, n, c, hw, cnt](VarNode<T>& out) {
                          const bool need_dx = x->requires_grad;
                          if (need_dx) x->ensure_grad();
                          if (gamma->requires_grad) gamma->ensure_grad();
                          if (beta->requires_grad) beta->ensure_grad();

                          for (std::int64_t ic = 0; ic < c; ++ic) {
                              const T mu = (*mean)[static_cast<std::size_t>(ic)];
                              const T is = (*invstd)[static_cast<std::size_t>(ic)];
                              const T g = gamma->value[ic];
                              // S1 = sum(dy), S2 = sum(dy * xhat)
                              T s1 = T(0), s2 = T(0);
                              for (std::int64_t in = 0; in < n; ++in) {
                                  const T* dy = out.grad.data() + (in * c + ic) * hw;
                                  const T* xv = x->value.data() + (in * c + ic) * hw;
                                  for (std::int64_t i = 0; i < hw; ++i) {
                                      s1 += dy[i];
                                      s2 += dy[i] * (xv[i] - mu) * is;
                                  }
                              }
                              if (gamma->requires_grad) gamma->grad[ic] += s2;
                              if (beta->requires_grad) beta->grad[ic] += s1;
                              if (!need_dx) continue;
                              for (std::int64_t in = 0; in < n; ++in) {
                                  const T* dy = out.grad.data() + (in * c + ic) * hw;
                                  const T* xv = x->value.data() + (in * c + ic) * hw;
                                  T* dx = x->grad.data() + (in * c + ic) * hw;
                                  if (training) {
                                      for (std::int64_t i = 0; i < hw; ++i) {
                                          const T xhat = (xv[i] - mu) * is;
                                          dx[i] += g * is *
                                                   (dy[i] - s1 / static_cast<T>(cnt) - xhat * s2 / static_cast<T>(cnt));
                                      }
                                  } else {
                                      for (std::int64_t i = 0; i < hw; ++i) dx[i] += dy[i] * g * is;
                                  }
                              }
                          }
                      });
}

// Max pooling with zero-size-safe argmax bookkeeping; padded cells never win.
template <typename T>
Var<T> max_pool2d(const Var<T>& x, int kernel, int stride, int pad) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw ShapeError("max_pool2d: expected NCHW");
    const std::int64_t n = s[0], c = s[1], h = s[2], w = s[3];
    const std::int64_t ho = (h + 2 * pad - kernel) / stride + 1;
    const std::int64_t wo = (w + 2 * pad - kernel) / stride + 1;
    if (ho < 1 || wo < 1) throw ShapeError("max_pool2d: window larger than padded input");

    Tensor<T> y({n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(y.numel()));
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t ic = 0; ic < c; ++ic) {
            const T* plane = x->value.data() + (in * c + ic) * h * w;
            T* dst = y.data() + (in * c + ic) * ho * wo;
            std::int64_t* am = argmax->data() + (in * c + ic) * ho * wo;
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = -1;
                    for (int ki = 0; ki < kernel; ++ki) {
                        const std::int64_t iy = oy * stride - pad + ki;
                        if (iy < 0 || iy >= h) continue;
                        for (int kj = 0; kj < kernel; ++kj) {
                            const std::int64_t ix = ox * stride - pad + kj;
                            if (ix < 0 || ix >= w) continue;
                            const T v = plane[iy * w + ix];
                            if (v > best) {
                                best = v;
                                best_idx = iy * w + ix;
                            }
                        }
                    }
                    dst[oy * wo + ox] = best;
                    am[oy * wo + ox] = best_idx;
                }
        }

    return make_op<T>(std::move(y), {x}, [x, argmax, n, c, h, w, ho, wo](VarNode<T>& out) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t in = 0; in < n; ++in)
            for (std::int64_t ic = 0; ic < c; ++ic) {
                const T* dy = out.grad.data() + (in * c + ic) * ho * wo;
                const std::int64_t* am = argmax->data() + (in * c + ic) * ho * wo;
                T* dx = x->grad.data() + (in * c + ic) * h * w;
                for (std::int64_t i = 0; i < ho * wo; ++i)
                    if (am[i] >= 0) dx[am[i]] += dy[i];
            }
    });
}

// Pure channel-to-space rearrangement:
// out(n, c, r*y+dy, r*x+dx) = in(n, c*r^2 + dy*r + dx, y, x).
template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
    const auto& s = x->value.shape();
    if (s.size() != 4) throw ShapeError("pixel_shuffle: expected NCHW");
    if (r < 1) throw ParamError("pixel_shuffle: scale must be >= 1");
    const std::int64_t n = s[0], cin = s[1], h = s[2], w = s[3];
    if (cin % (static_cast<std::int64_t>(r) * r) != 0)
        throw ShapeError("pixel_shuffle: channels not divisible by r^2");
    if (r == 1) return x;
    const std::int64_t cout = cin / (r * r);

    Tensor<T> y({n, cout, h * r, w * r});
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t oc = 0; oc < cout; ++oc)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    const T* src = x->value.data() + ((in * cin + oc * r * r + dy * r + dx) * h) * w;
                    for (std::int64_t iy = 0; iy < h; ++iy) {
                        T* dst = y.data() + ((in * cout + oc) * h * r + iy * r + dy) * w * r + dx;
                        for (std::int64_t ix = 0; ix < w; ++ix) dst[ix * r] = src[iy * w + ix];
                    }
                }

    return make_op<T>(std::move(y), {x}, [x, r, n, cin, cout, h, w](VarNode<T>& out) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t in = 0; in < n; ++in)
            for (std::int64_t oc = 0; oc < cout; ++oc)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        T* dst = x->grad.data() + ((in * cin + oc * r * r + dy * r + dx) * h) * w;
                        for (std::int64_t iy = 0; iy < h; ++iy) {
                            const T* src = out.grad.data() + ((in * cout + oc) * h * r + iy * r + dy) * w * r + dx;
                            for (std::int64_t ix = 0; ix < w; ++ix) dst[iy * w + ix] += src[ix * r];
                        }
                    }
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw ShapeError("concat_channels: incompatible shapes");
    const std::int64_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];

    Tensor<T> y({n, ca + cb, sa[2], sa[3]});
    for (std::int64_t in = 0; in < n; ++in) {
        std::copy_n(a->value.data() + in * ca * hw, ca * hw, y.data() + in * (ca + cb) * hw);
        std::copy_n(b->value.data() + in * cb * hw, cb * hw, y.data() + in * (ca + cb) * hw + ca * hw);
    }
    return make_op<T>(std::move(y), {a, b}, [a, b, n, ca, cb, hw](VarNode<T>& out) {
        for (std::int64_t in = 0; in < n; ++in) {
            if (a->requires_grad) {
                a->ensure_grad();
                const T* src = out.grad.data() + in * (ca + cb) * hw;
                T* dst = a->grad.data() + in * ca * hw;
                for (std::int64_t i = 0; i < ca * hw; ++i) dst[i] += src[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                const T* src = out.grad.data() + in * (ca + cb) * hw + ca * hw;
                T* dst = b->grad.data() + in * cb * hw;
                for (std::int64_t i = 0; i < cb * hw; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> y(x->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = x->value[i] * factor;
    return make_op<T>(std::move(y), {x}, [x, factor](VarNode<T>& out) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::int64_t i = 0; i < out.grad.numel(); ++i) x->grad[i] += out.grad[i] * factor;
    });
}

// Mean absolute difference (scalar). Subgradient 0 where pred == target.
template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
    if (!pred->value.same_shape(target->value)) throw ShapeError("l1_loss: shape mismatch");
    const std::int64_t n = pred->value.numel();
    T total = T(0);
    for (std::int64_t i = 0; i < n; ++i) total += std::abs(pred->value[i] - target->value[i]);
    return make_op<T>(Tensor<T>::scalar(total / static_cast<T>(n)), {pred, target}, [pred, target, n](VarNode<T>& out) {
        const T g = out.grad[0] / static_cast<T>(n);
        for (const Var<T>& side : {pred, target}) {
            if (!side->requires_grad) continue;
            side->ensure_grad();
            const T sign = (side == pred) ? T(1) : T(-1);
            for (std::int64_t i = 0; i < n; ++i) {
                const T d = pred->value[i] - target->value[i];
                if (d > T(0))
                    side->grad[i] += sign * g;
                else if (d < T(0))
                    side->grad[i] -= sign * g;
            }
        }
    });
}

// Mean squared difference (scalar).
template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("mse_loss: shape mismatch");
    const std::int64_t n = a->value.numel();
    T total = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
        const T d = a->value[i] - b->value[i];
        total += d * d;
    }
    return make_op<T>(Tensor<T>::scalar(total / static_cast<T>(n)), {a, b}, [a, b, n](VarNode<T>& out) {
        const T g = T(2) * out.grad[0] / static_cast<T>(n);
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) a->grad[i] += g * (a->value[i] - b->value[i]);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) b->grad[i] -= g * (a->value[i] - b->value[i]);
        }
    });
}

// Scalar accumulate: out = a + factor * b. Used to combine loss terms.
template <typename T>
Var<T> add_scaled(const Var<T>& a, const Var<T>& b, T factor) {
    if (a->value.numel() != 1 || b->value.numel() != 1) throw ShapeError("add_scaled: scalars only");
    return make_op<T>(Tensor<T>::scalar(a->value[0] + factor * b->value[0]), {a, b}, [a, b, factor](VarNode<T>& out) {
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad[0] += out.grad[0];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad[0] += factor * out.grad[0];
        }
    });
}

}  // namespace orbit
