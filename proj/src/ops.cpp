#include "ynet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "ynet/errors.hpp"

namespace ynet::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Dims4 {
  int64_t n, c, h, w;
};

Dims4 dims4(const Tensor& t, const char* what) {
  expect_rank(t, 4, what);
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

// Column layout: row (c, ki, kj), column (n, oh, ow).
void im2col(const Tensor& x, int64_t kh, int64_t kw, int stride, int padding, int64_t ho, int64_t wo,
            RowMat& cols) {
  const auto [n_, c_, h_, w_] = dims4(x, "im2col");
  const int64_t p = ho * wo;
  cols.resize(c_ * kh * kw, n_ * p);
  const double* src = x.ptr();
  for (int64_t c = 0; c < c_; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        double* row = cols.data() + ((c * kh + ki) * kw + kj) * cols.cols();
        for (int64_t n = 0; n < n_; ++n) {
          const double* plane = src + (n * c_ + c) * h_ * w_;
          double* out = row + n * p;
          for (int64_t oh = 0; oh < ho; ++oh) {
            const int64_t ih = oh * stride - padding + ki;
            for (int64_t ow = 0; ow < wo; ++ow) {
              const int64_t iw = ow * stride - padding + kj;
              out[oh * wo + ow] = (ih >= 0 && ih < h_ && iw >= 0 && iw < w_) ? plane[ih * w_ + iw] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const RowMat& cols, int64_t kh, int64_t kw, int stride, int padding, int64_t ho, int64_t wo,
                Tensor& dx) {
  const auto [n_, c_, h_, w_] = dims4(dx, "col2im");
  const int64_t p = ho * wo;
  double* dst = dx.ptr();
  for (int64_t c = 0; c < c_; ++c) {
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const double* row = cols.data() + ((c * kh + ki) * kw + kj) * cols.cols();
        for (int64_t n = 0; n < n_; ++n) {
          double* plane = dst + (n * c_ + c) * h_ * w_;
          const double* in = row + n * p;
          for (int64_t oh = 0; oh < ho; ++oh) {
            const int64_t ih = oh * stride - padding + ki;
            if (ih < 0 || ih >= h_) continue;
            for (int64_t ow = 0; ow < wo; ++ow) {
              const int64_t iw = ow * stride - padding + kj;
              if (iw >= 0 && iw < w_) plane[ih * w_ + iw] += in[oh * wo + ow];
            }
          }
        }
      }
    }
  }
}

struct Interp {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;
};

Interp make_interp(int64_t in, int64_t out) {
  Interp t;
  t.i0.resize(static_cast<size_t>(out));
  t.i1.resize(static_cast<size_t>(out));
  t.w1.resize(static_cast<size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<int64_t>(std::floor(src));
    t.i0[static_cast<size_t>(i)] = lo;
    t.i1[static_cast<size_t>(i)] = std::min(lo + 1, in - 1);
    t.w1[static_cast<size_t>(i)] = src - static_cast<double>(lo);
  }
  return t;
}

std::pair<int64_t, int64_t> adaptive_bin(int64_t i, int64_t in, int64_t out) {
  const int64_t start = (i * in) / out;
  const int64_t end = ((i + 1) * in + out - 1) / out;
  return {start, end};
}

}  // namespace

int64_t conv_output_size(int64_t in, int64_t kernel, int64_t stride, int64_t padding) {
  if (stride < 1) throw ShapeError("stride must be >= 1");
  const int64_t span = in + 2 * padding - kernel;
  if (span < 0) {
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * padding));
  }
  return span / stride + 1;
}

Var conv2d(Var input, Var kernel, int stride, int padding) {
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  const auto [n_, c_, h_, w_] = dims4(x, "conv2d input");
  const auto [co, ci, kh, kw] = dims4(k, "conv2d kernel");
  if (ci != c_) {
    throw ShapeError("conv2d: input has " + std::to_string(c_) + " channels, kernel expects " +
                     std::to_string(ci) + " (kernel " + to_string(k.shape()) + ")");
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel sides must be odd");
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  const int64_t ho = conv_output_size(h_, kh, stride, padding);
  const int64_t wo = conv_output_size(w_, kw, stride, padding);
  const int64_t p = ho * wo;

  RowMat cols;
  im2col(x, kh, kw, stride, padding, ho, wo, cols);
  const ConstMapMat wm(k.ptr(), co, ci * kh * kw);
  const RowMat y = wm * cols;

  Tensor out({n_, co, ho, wo});
  for (int64_t n = 0; n < n_; ++n) {
    for (int64_t o = 0; o < co; ++o) {
      std::copy_n(y.data() + o * y.cols() + n * p, p, out.ptr() + (n * co + o) * p);
    }
  }

  Tape* tape = input.tape;
  return tape->record(std::move(out), {input, kernel}, [=](const Tensor& g) {
    RowMat gm(co, n_ * p);
    for (int64_t n = 0; n < n_; ++n) {
      for (int64_t o = 0; o < co; ++o) {
        std::copy_n(g.ptr() + (n * co + o) * p, p, gm.data() + o * gm.cols() + n * p);
      }
    }
    const Tensor& xv = tape->value(input);
    const Tensor& kv = tape->value(kernel);
    if (tape->requires_grad(kernel)) {
      RowMat cols_b;
      im2col(xv, kh, kw, stride, padding, ho, wo, cols_b);
      MapMat gk(tape->grad_buffer(kernel).ptr(), co, ci * kh * kw);
      gk.noalias() += gm * cols_b.transpose();
    }
    if (tape->requires_grad(input)) {
      const ConstMapMat wmb(kv.ptr(), co, ci * kh * kw);
      const RowMat dcols = wmb.transpose() * gm;
      col2im_add(dcols, kh, kw, stride, padding, ho, wo, tape->grad_buffer(input));
    }
  });
}

Var add_channel_bias(Var input, Var bias) {
  const Tensor& x = input.value();
  const auto [n_, c_, h_, w_] = dims4(x, "add_channel_bias input");
  if (bias.value().shape() != Shape{c_}) {
    throw ShapeError("add_channel_bias: bias " + to_string(bias.shape()) + " for " + std::to_string(c_) +
                     " channels");
  }
  const int64_t p = h_ * w_;
  Tensor out = x;
  const double* b = bias.value().ptr();
  for (int64_t n = 0; n < n_; ++n)
    for (int64_t c = 0; c < c_; ++c) {
      double* d = out.ptr() + (n * c_ + c) * p;
      for (int64_t i = 0; i < p; ++i) d[i] += b[c];
    }
  Tape* tape = input.tape;
  return tape->record(std::move(out), {input, bias}, [=](const Tensor& g) {
    tape->accumulate(input, g);
    if (tape->requires_grad(bias)) {
      double* gb = tape->grad_buffer(bias).ptr();
      for (int64_t n = 0; n < n_; ++n)
        for (int64_t c = 0; c < c_; ++c) {
          const double* s = g.ptr() + (n * c_ + c) * p;
          double acc = 0.0;
          for (int64_t i = 0; i < p; ++i) acc += s[i];
          gb[c] += acc;
        }
    }
  });
}

Var bilinear_resize(Var input, int64_t out_h, int64_t out_w) {
  const Tensor& x = input.value();
  const auto [n_, c_, h_, w_] = dims4(x, "bilinear_resize input");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: empty output");
  auto ty = std::make_shared<Interp>(make_interp(h_, out_h));
  auto tx = std::make_shared<Interp>(make_interp(w_, out_w));
  Tensor out({n_, c_, out_h, out_w});
  for (int64_t plane = 0; plane < n_ * c_; ++plane) {
    const double* s = x.ptr() + plane * h_ * w_;
    double* d = out.ptr() + plane * out_h * out_w;
    for (int64_t i = 0; i < out_h; ++i) {
      const size_t iy = static_cast<size_t>(i);
      const double a = ty->w1[iy];
      const double* r0 = s + ty->i0[iy] * w_;
      const double* r1 = s + ty->i1[iy] * w_;
      for (int64_t j = 0; j < out_w; ++j) {
        const size_t jx = static_cast<size_t>(j);
        const double b = tx->w1[jx];
        const int64_t x0 = tx->i0[jx], x1 = tx->i1[jx];
        d[i * out_w + j] = (1 - a) * ((1 - b) * r0[x0] + b * r0[x1]) + a * ((1 - b) * r1[x0] + b * r1[x1]);
      }
    }
  }
  Tape* tape = input.tape;
  return tape->record(std::move(out), {input}, [=](const Tensor& g) {
    Tensor& dx = tape->grad_buffer(input);
    for (int64_t plane = 0; plane < n_ * c_; ++plane) {
      const double* s = g.ptr() + plane * out_h * out_w;
      double* d = dx.ptr() + plane * h_ * w_;
      for (int64_t i = 0; i < out_h; ++i) {
        const size_t iy = static_cast<size_t>(i);
        const double a = ty->w1[iy];
        double* r0 = d + ty->i0[iy] * w_;
        double* r1 = d + ty->i1[iy] * w_;
        for (int64_t j = 0; j < out_w; ++j) {
          const size_t jx = static_cast<size_t>(j);
          const double b = tx->w1[jx];
          const int64_t x0 = tx->i0[jx], x1 = tx->i1[jx];
          const double v = s[i * out_w + j];
          r0[x0] += (1 - a) * (1 - b) * v;
          r0[x1] += (1 - a) * b * v;
          r1[x0] += a * (1 - b) * v;
          r1[x1] += a * b * v;
        }
      }
    }
  });
}

Var bilinear_upsample(Var input, int factor) {
  if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
  const Shape& s = input.shape();
  if (s.size() != 4) throw ShapeError("bilinear_upsample: expected rank 4, got " + to_string(s));
  return bilinear_resize(input, s[2] * factor, s[3] * factor);
}

Var bilinear_upsample_2x(Var input) { return bilinear_upsample(input, 2); }

Var region_max_pool(Var input, const Rect& r) {
  const Tensor& x = input.value();
  const auto [n_, c_, h_, w_] = dims4(x, "region_max_pool input");
  if (!(0 <= r.x0 && r.x0 < r.x1 && r.x1 <= w_ && 0 <= r.y0 && r.y0 < r.y1 && r.y1 <= h_)) {
    throw ShapeError("region_max_pool: region (" + std::to_string(r.x0) + "," + std::to_string(r.y0) + "," +
                     std::to_string(r.x1) + "," + std::to_string(r.y1) + ") is empty or outside the " +
                     std::to_string(h_) + "x" + std::to_string(w_) + " map");
  }
  Tensor out({n_, c_});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n_ * c_));
  for (int64_t plane = 0; plane < n_ * c_; ++plane) {
    const double* s = x.ptr() + plane * h_ * w_;
    int64_t best = r.y0 * w_ + r.x0;
    for (int64_t y = r.y0; y < r.y1; ++y)
      for (int64_t xx = r.x0; xx < r.x1; ++xx)
        if (s[y * w_ + xx] > s[best]) best = y * w_ + xx;
    out[plane] = s[best];
    (*argmax)[static_cast<size_t>(plane)] = plane * h_ * w_ + best;
  }
  Tape* tape = input.tape;
  return tape->record(std::move(out), {input}, [=](const Tensor& g) {
    double* d = tape->grad_buffer(input).ptr();
    for (int64_t plane = 0; plane < n_ * c_; ++plane) d[(*argmax)[static_cast<size_t>(plane)]] += g[plane];
  });
}

Var max_pool_2d(Var input, int kernel, int stride, int padding) {
  const Tensor& x = input.value();
  const auto [n_, c_, h_, w_] = dims4(x, "max_pool_2d input");
  if (kernel < 1 || padding < 0 || 2 * padding >= kernel + 1) {
    throw ShapeError("max_pool_2d: invalid kernel/padding");
  }
  const int64_t ho = conv_output_size(h_, kernel, stride, padding);
  const int64_t wo = conv_output_size(w_, kernel, stride, padding);
  Tensor out({n_, c_, ho, wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  for (int64_t plane = 0; plane < n_ * c_; ++plane) {
    const double* s = x.ptr() + plane * h_ * w_;
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow) {
        int64_t best = -1;
        for (int64_t ki = 0; ki < kernel; ++ki) {
          const int64_t ih = oh * stride - padding + ki;
          if (ih < 0 || ih >= h_) continue;
          for (int64_t kj = 0; kj < kernel; ++kj) {
            const int64_t iw = ow * stride - padding + kj;
            if (iw < 0 || iw >= w_) continue;
            if (best < 0 || s[ih * w_ + iw] > s[best]) best = ih * w_ + iw;
          }
        }
        const int64_t o = (plane * ho + oh) * wo + ow;
        out[o] = s[best];
        (*argmax)[static_cast<size_t>(o)] = plane * h_ * w_ + best;
      }
  }
  Tape* tape = input.tape;
  return tape->record(std::move(out), {input}, [=](const Tensor& g) {
    double* d = tape->grad_buffer(input).ptr();
    for (int64_t o = 0; o < g.numel(); ++o) d[(*argmax)[static_cast<size_t>(o)]] += g[o];
  });
}

namespace {

Var batch_norm_impl(Var input, Var gamma, Var beta, const BatchNormStats& running, BatchNormStats* update,
                    bool training) {
  const Tensor& x = input.value();
  const auto [n_, c_, h_, w_] = dims4(x, "batch_norm_2d input");
  const Shape cs{c_};
  if (gamma.shape() != cs || beta.shape() != cs || running.mean.shape() != cs || running.var.shape() != cs) {
    throw ShapeError("batch_norm_2d: parameter/statistics shapes must be [" + std::to_string(c_) + "]");
  }
  const int64_t p = h_ * w_;
  const int64_t m = n_ * p;
  const double* gv = gamma.value().ptr();
  const double* bv = beta.value().ptr();

  auto xhat = std::make_shared<Tensor>(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(c_));
  Tensor out(x.shape());
  for (int64_t c = 0; c < c_; ++c) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for (int64_t n = 0; n < n_; ++n) {
        const double* src = x.ptr() + (n * c_ + c) * p;
        for (int64_t i = 0; i < p; ++i) s += src[i];
      }
      mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (int64_t n = 0; n < n_; ++n) {
        const double* src = x.ptr() + (n * c_ + c) * p;
        for (int64_t i = 0; i < p; ++i) ss += (src[i] - mu) * (src[i] - mu);
      }
      var = ss / static_cast<double>(m);
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      if (update) {
        update->mean[c] = (1.0 - kBatchNormMomentum) * update->mean[c] + kBatchNormMomentum * mu;
        update->var[c] = (1.0 - kBatchNormMomentum) * update->var[c] + kBatchNormMomentum * unbiased;
      }
    } else {
      mu = running.mean[c];
      var = running.var[c];
    }
    const double is = 1.0 / std::sqrt(var + kBatchNormEps);
    (*inv_std)[static_cast<size_t>(c)] = is;
    for (int64_t n = 0; n < n_; ++n) {
      const int64_t off = (n * c_ + c) * p;
      for (int64_t i = 0; i < p; ++i) {
        const double xh = (x[off + i] - mu) * is;
        (*xhat)[off + i] = xh;
        out[off + i] = gv[c] * xh + bv[c];
      }
    }
  }

  Tape* tape = input.tape;
  return tape->record(std::move(out), {input, gamma, beta}, [=](const Tensor& g) {
    const double* gam = tape->value(gamma).ptr();
    double* dg = tape->requires_grad(gamma) ? tape->grad_buffer(gamma).ptr() : nullptr;
    double* db = tape->requires_grad(beta) ? tape->grad_buffer(beta).ptr() : nullptr;
    double* dx = tape->requires_grad(input) ? tape->grad_buffer(input).ptr() : nullptr;
    for (int64_t c = 0; c < c_; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int64_t n = 0; n < n_; ++n) {
        const int64_t off = (n * c_ + c) * p;
        for (int64_t i = 0; i < p; ++i) {
          sum_g += g[off + i];
          sum_gx += g[off + i] * (*xhat)[off + i];
        }
      }
      if (dg) dg[c] += sum_gx;
      if (db) db[c] += sum_g;
      if (!dx) continue;
      const double is = (*inv_std)[static_cast<size_t>(c)];
      for (int64_t n = 0; n < n_; ++n) {
        const int64_t off = (n * c_ + c) * p;
        for (int64_t i = 0; i < p; ++i) {
          if (training) {
            const double md = static_cast<double>(m);
            dx[off + i] += gam[c] * is / md * (md * g[off + i] - sum_g - (*xhat)[off + i] * sum_gx);
          } else {
            dx[off + i] += gam[c] * is * g[off + i];
          }
        }
      }
    }
  });
}

}  // namespace

Var batch_norm_2d(Var input, Var gamma, Var beta, BatchNormStats& running, bool training) {
  return batch_norm_impl(input, gamma, beta, running, training ? &running : nullptr, training);
}

Var batch_norm_2d(Var input, Var gamma, Var beta, const BatchNormStats& running) {
  return batch_norm_impl(input, gamma, beta, running, nullptr, false);
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [=](const Tensor& g) {
    const Tensor& xv = tape->value(x);
    double* d = tape->grad_buffer(x).ptr();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (xv[i] > 0.0) d[i] += g[i];
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::tanh(v);
  Tape* tape = x.tape;
  auto y = std::make_shared<Tensor>(out);
  return tape->record(std::move(out), {x}, [=](const Tensor& g) {
    double* d = tape->grad_buffer(x).ptr();
    for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * (1.0 - (*y)[i] * (*y)[i]);
  });
}

Var add(Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  Tape* tape = a.tape;
  return tape->record(std::move(out), {a, b}, [=](const Tensor& g) {
    tape->accumulate(a, g);
    tape->accumulate(b, g);
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [=](const Tensor& g) {
    double* d = tape->grad_buffer(x).ptr();
    for (int64_t i = 0; i < g.numel(); ++i) d[i] += factor * g[i];
  });
}

Var linear(Var x, Var weight) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  expect_rank(xv, 2, "linear input");
  expect_rank(wv, 2, "linear weight");
  const int64_t n = xv.dim(0), d = xv.dim(1), o = wv.dim(0);
  if (wv.dim(1) != d) {
    throw ShapeError("linear: input " + to_string(xv.shape()) + " vs weight " + to_string(wv.shape()));
  }
  Tensor out({n, o});
  MapMat(out.ptr(), n, o).noalias() = ConstMapMat(xv.ptr(), n, d) * ConstMapMat(wv.ptr(), o, d).transpose();
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x, weight}, [=](const Tensor& g) {
    const ConstMapMat gm(g.ptr(), n, o);
    if (tape->requires_grad(x)) {
      MapMat(tape->grad_buffer(x).ptr(), n, d).noalias() += gm * ConstMapMat(tape->value(weight).ptr(), o, d);
    }
    if (tape->requires_grad(weight)) {
      MapMat(tape->grad_buffer(weight).ptr(), o, d).noalias() +=
          gm.transpose() * ConstMapMat(tape->value(x).ptr(), n, d);
    }
  });
}

Var l2_normalize(Var x) {
  const Tensor& xv = x.value();
  expect_rank(xv, 2, "l2_normalize input");
  const int64_t n = xv.dim(0), d = xv.dim(1);
  Tensor out(xv.shape());
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j) ss += xv[r * d + j] * xv[r * d + j];
    const double nrm = std::sqrt(ss);
    (*norms)[static_cast<size_t>(r)] = nrm;
    if (nrm == 0.0) continue;
    for (int64_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / nrm;
  }
  auto y = std::make_shared<Tensor>(out);
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [=](const Tensor& g) {
    double* dx = tape->grad_buffer(x).ptr();
    for (int64_t r = 0; r < n; ++r) {
      const double nrm = (*norms)[static_cast<size_t>(r)];
      if (nrm == 0.0) continue;
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += (*y)[r * d + j] * g[r * d + j];
      for (int64_t j = 0; j < d; ++j) dx[r * d + j] += (g[r * d + j] - (*y)[r * d + j] * dot) / nrm;
    }
  });
}

Var global_avg_pool(Var x) {
  const auto [n_, c_, h_, w_] = dims4(x.value(), "global_avg_pool input");
  return reshape(adaptive_avg_pool2d(x, 1, 1), {n_, c_});
}

Var adaptive_avg_pool2d(Var x, int64_t out_h, int64_t out_w) {
  const Tensor& xv = x.value();
  const auto [n_, c_, h_, w_] = dims4(xv, "adaptive_avg_pool2d input");
  if (out_h < 1 || out_w < 1) throw ShapeError("adaptive_avg_pool2d: empty output");
  Tensor out({n_, c_, out_h, out_w});
  for (int64_t plane = 0; plane < n_ * c_; ++plane) {
    const double* s = xv.ptr() + plane * h_ * w_;
    for (int64_t i = 0; i < out_h; ++i) {
      const auto [y0, y1] = adaptive_bin(i, h_, out_h);
      for (int64_t j = 0; j < out_w; ++j) {
        const auto [x0, x1] = adaptive_bin(j, w_, out_w);
        double acc = 0.0;
        for (int64_t y = y0; y < y1; ++y)
          for (int64_t xx = x0; xx < x1; ++xx) acc += s[y * w_ + xx];
        out[(plane * out_h + i) * out_w + j] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [=](const Tensor& g) {
    double* d = tape->grad_buffer(x).ptr();
    for (int64_t plane = 0; plane < n_ * c_; ++plane) {
      double* dp = d + plane * h_ * w_;
      for (int64_t i = 0; i < out_h; ++i) {
        const auto [y0, y1] = adaptive_bin(i, h_, out_h);
        for (int64_t j = 0; j < out_w; ++j) {
          const auto [x0, x1] = adaptive_bin(j, w_, out_w);
          const double v = g[(plane * out_h + i) * out_w + j] / static_cast<double>((y1 - y0) * (x1 - x0));
          for (int64_t y = y0; y < y1; ++y)
            for (int64_t xx = x0; xx < x1; ++xx) dp[y * w_ + xx] += v;
        }
      }
    }
  });
}

Var channel_group_mean(Var x, int64_t groups) {
  const Tensor& xv = x.value();
  const auto [n_, c_, h_, w_] = dims4(xv, "channel_group_mean input");
  if (groups < 1 || groups > c_) {
    throw ShapeError("channel_group_mean: cannot split " + std::to_string(c_) + " channels into " +
                     std::to_string(groups) + " groups");
  }
  const int64_t size = c_ / groups;
  const int64_t p = h_ * w_;
  auto begin = [=](int64_t gi) { return gi * size; };
  auto end = [=](int64_t gi) { return gi == groups - 1 ? c_ : (gi + 1) * size; };
  Tensor out({n_, groups, h_, w_});
  for (int64_t n = 0; n < n_; ++n)
    for (int64_t gi = 0; gi < groups; ++gi) {
      double* d = out.ptr() + (n * groups + gi) * p;
      for (int64_t c = begin(gi); c < end(gi); ++c) {
        const double* s = xv.ptr() + (n * c_ + c) * p;
        for (int64_t i = 0; i < p; ++i) d[i] += s[i];
      }
      const double cnt = static_cast<double>(end(gi) - begin(gi));
      for (int64_t i = 0; i < p; ++i) d[i] /= cnt;
    }
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [=](const Tensor& g) {
    double* dx = tape->grad_buffer(x).ptr();
    for (int64_t n = 0; n < n_; ++n)
      for (int64_t gi = 0; gi < groups; ++gi) {
        const double* s = g.ptr() + (n * groups + gi) * p;
        const double cnt = static_cast<double>(end(gi) - begin(gi));
        for (int64_t c = begin(gi); c < end(gi); ++c) {
          double* d = dx + (n * c_ + c) * p;
          for (int64_t i = 0; i < p; ++i) d[i] += s[i] / cnt;
        }
      }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  Tape* tape = x.tape;
  return tape->record(std::move(out), {x}, [=](const Tensor& g) {
    double* d = tape->grad_buffer(x).ptr();
    for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  Tape* tape = x.tape;
  return tape->record(Tensor::scalar(s), {x}, [=](const Tensor& g) {
    const double gv = g[0];
    for (double& d : tape->grad_buffer(x).data()) d += gv;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var weighted_sum(Var a, double wa, Var b, double wb) {
  if (a.value().numel() != 1 || b.value().numel() != 1) throw ShapeError("weighted_sum: scalar inputs only");
  Tape* tape = a.tape;
  return tape->record(Tensor::scalar(wa * a.value()[0] + wb * b.value()[0]), {a, b}, [=](const Tensor& g) {
    if (tape->requires_grad(a)) tape->grad_buffer(a)[0] += wa * g[0];
    if (tape->requires_grad(b)) tape->grad_buffer(b)[0] += wb * g[0];
  });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& targets) {
  const Tensor& lv = logits.value();
  int64_t n_, k_, p;
  if (lv.rank() == 2) {
    n_ = lv.dim(0), k_ = lv.dim(1), p = 1;
  } else if (lv.rank() == 4) {
    n_ = lv.dim(0), k_ = lv.dim(1), p = lv.dim(2) * lv.dim(3);
  } else {
    throw ShapeError("softmax_cross_entropy: logits must be rank 2 or 4, got " + to_string(lv.shape()));
  }
  if (static_cast<int64_t>(targets.size()) != n_ * p) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n_ * p) + " positions");
  }
  auto probs = std::make_shared<Tensor>(lv.shape());
  double loss = 0.0;
  std::vector<double> z(static_cast<size_t>(k_));
  for (int64_t n = 0; n < n_; ++n)
    for (int64_t i = 0; i < p; ++i) {
      const int t = targets[static_cast<size_t>(n * p + i)];
      if (t < 0 || t >= k_) throw ShapeError("softmax_cross_entropy: target out of range");
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t k = 0; k < k_; ++k) mx = std::max(mx, lv[(n * k_ + k) * p + i]);
      double se = 0.0;
      for (int64_t k = 0; k < k_; ++k) {
        z[static_cast<size_t>(k)] = std::exp(lv[(n * k_ + k) * p + i] - mx);
        se += z[static_cast<size_t>(k)];
      }
      for (int64_t k = 0; k < k_; ++k) (*probs)[(n * k_ + k) * p + i] = z[static_cast<size_t>(k)] / se;
      loss -= lv[(n * k_ + t) * p + i] - mx - std::log(se);
    }
  const double count = static_cast<double>(n_ * p);
  auto tg = std::make_shared<std::vector<int>>(targets);
  Tape* tape = logits.tape;
  return tape->record(Tensor::scalar(loss / count), {logits}, [=](const Tensor& g) {
    double* d = tape->grad_buffer(logits).ptr();
    const double s = g[0] / count;
    for (int64_t n = 0; n < n_; ++n)
      for (int64_t i = 0; i < p; ++i) {
        const int t = (*tg)[static_cast<size_t>(n * p + i)];
        for (int64_t k = 0; k < k_; ++k) {
          const int64_t o = (n * k_ + k) * p + i;
          d[o] += s * ((*probs)[o] - (k == t ? 1.0 : 0.0));
        }
      }
  });
}

}  // namespace ynet::nn
