#pragma once

#include "tacvit/tensor.hpp"

namespace tacvit {

// 2D cross-correlation over a [C_in x H x W] input with [C_out x C_in x k x k]
// kernels, via im2col + one matrix product.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernels, int64_t stride,
                 int64_t padding) {
  if (x.rank() != 3 || kernels.rank() != 4)
    throw ShapeError("conv2d: expects [C,H,W] input and [Co,Ci,k,k] kernels, got " +
                     shape_str(x.shape()) + " / " + shape_str(kernels.shape()));
  const int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t co = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != ci)
    throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(kernels.shape()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (kh > h + 2 * padding || kw > w + 2 * padding)
    throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  const int64_t ho = (h + 2 * padding - kh) / stride + 1;
  const int64_t wo = (w + 2 * padding - kw) / stride + 1;
  const int64_t patch = ci * kh * kw, cols = ho * wo;

  // col[patch x cols], column p = flattened receptive field of output pixel p
  std::vector<T> col(static_cast<size_t>(patch * cols), T{0});
  for (int64_t c = 0; c < ci; ++c)
    for (int64_t dy = 0; dy < kh; ++dy)
      for (int64_t dx = 0; dx < kw; ++dx) {
        const int64_t prow = (c * kh + dy) * kw + dx;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy * stride + dy - padding;
          if (iy < 0 || iy >= h) continue;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox * stride + dx - padding;
            if (ix < 0 || ix >= w) continue;
            col[prow * cols + oy * wo + ox] = x.value()[(c * h + iy) * w + ix];
          }
        }
      }

  Tensor<T> out = Tensor<T>::zeros({co, ho, wo}, detail::want_grad(x, kernels));
  detail::MapM<T>(out.mutable_value().data(), co, cols) =
      detail::CMapM<T>(kernels.value().data(), co, patch) * detail::CMapM<T>(col.data(), patch, cols);
  check_finite("conv2d", out.value());

  if (out.requires_grad()) {
    tape.record("conv2d", out,
                [x, kernels, out, col = std::move(col), ci, h, w, co, kh, kw, ho, wo, stride,
                 padding, patch, cols]() mutable {
                  detail::CMapM<T> dOut(out.grad().data(), co, cols);
                  if (kernels.requires_grad())
                    detail::MapM<T>(kernels.ensure_grad().data(), co, patch) +=
                        dOut * detail::CMapM<T>(col.data(), patch, cols).transpose();
                  if (x.requires_grad()) {
                    detail::EMat<T> dcol =
                        detail::CMapM<T>(kernels.value().data(), co, patch).transpose() * dOut;
                    auto& gx = x.ensure_grad();
                    for (int64_t c = 0; c < ci; ++c)
                      for (int64_t dy = 0; dy < kh; ++dy)
                        for (int64_t dx = 0; dx < kw; ++dx) {
                          const int64_t prow = (c * kh + dy) * kw + dx;
                          for (int64_t oy = 0; oy < ho; ++oy) {
                            const int64_t iy = oy * stride + dy - padding;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t ox = 0; ox < wo; ++ox) {
                              const int64_t ix = ox * stride + dx - padding;
                              if (ix < 0 || ix >= w) continue;
                              gx[(c * h + iy) * w + ix] += dcol(prow, oy * wo + ox);
                            }
                          }
                        }
                  }
                });
  }
  return out;
}

// Per-channel bias over a [C x H x W] map.
template <typename T>
Tensor<T> add_channel_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() != 3 || b.rank() != 1 || b.dim(0) != x.dim(0))
    throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
  const int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<T> out = Tensor<T>::zeros(x.shape(), detail::want_grad(x, b));
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < hw; ++j)
      out.mutable_value()[i * hw + j] = x.value()[i * hw + j] + b.value()[i];
  check_finite("add_channel_bias", out.value());
  if (out.requires_grad()) {
    tape.record("add_channel_bias", out, [x, b, out, c, hw]() mutable {
      const auto& g = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.ensure_grad();
        for (int64_t i = 0; i < c; ++i)
          for (int64_t j = 0; j < hw; ++j) gb[i] += g[i * hw + j];
      }
    });
  }
  return out;
}

enum class PoolKind { Avg, Max };

// 2x2/stride-2 pooling on [C x H x W]; odd trailing row/col is dropped.
template <typename T>
Tensor<T> pool2x2(Tape<T>& tape, const Tensor<T>& x, PoolKind kind) {
  if (x.rank() != 3) throw ShapeError("pool2x2: expects [C,H,W], got " + shape_str(x.shape()));
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t ho = h / 2, wo = w / 2;
  if (ho < 1 || wo < 1) throw ShapeError("pool2x2: spatial size below 2x2: " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::zeros({c, ho, wo}, x.requires_grad());
  std::vector<int64_t> argmax(kind == PoolKind::Max ? static_cast<size_t>(c * ho * wo) : 0);
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox) {
        const int64_t o = (ch * ho + oy) * wo + ox;
        if (kind == PoolKind::Avg) {
          T s = 0;
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx)
              s += x.value()[(ch * h + oy * 2 + dy) * w + ox * 2 + dx];
          out.mutable_value()[o] = s / T{4};
        } else {
          int64_t best = (ch * h + oy * 2) * w + ox * 2;
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
              int64_t idx = (ch * h + oy * 2 + dy) * w + ox * 2 + dx;
              if (x.value()[idx] > x.value()[best]) best = idx;
            }
          out.mutable_value()[o] = x.value()[best];
          argmax[o] = best;
        }
      }
  if (out.requires_grad()) {
    tape.record("pool2x2", out, [x, out, kind, argmax = std::move(argmax), c, h, w, ho, wo]() mutable {
      auto& gx = x.ensure_grad();
      const auto& g = out.grad();
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t oy = 0; oy < ho; ++oy)
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t o = (ch * ho + oy) * wo + ox;
            if (kind == PoolKind::Avg) {
              for (int64_t dy = 0; dy < 2; ++dy)
                for (int64_t dx = 0; dx < 2; ++dx)
                  gx[(ch * h + oy * 2 + dy) * w + ox * 2 + dx] += g[o] / T{4};
            } else {
              gx[argmax[o]] += g[o];
            }
          }
    });
  }
  return out;
}

}  // namespace tacvit
