/* Copyright 2026 The stquant Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "stq/ops.hpp"

#include <cmath>
#include <functional>

namespace stq {

namespace {

void check_kernel_input(const Shape& input, const Shape& kernel) {
  if (input.c != kernel.w) {
    fail(ErrorCode::kShapeMismatch, "conv2d: input " + input.str() + " has " +
                                        std::to_string(input.c) + " channels but kernel " +
                                        kernel.str() + " expects " + std::to_string(kernel.w));
  }
}

}  // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, ConvGeometry geometry) {
  check_kernel_input(input, kernel);
  require(geometry.stride >= 1, ErrorCode::kInvalidArgument, "conv2d: stride must be >= 1");
  const std::size_t padded_h = input.h + 2 * geometry.padding;
  const std::size_t padded_w = input.w + 2 * geometry.padding;
  if (kernel.n == 0 || kernel.h == 0 || padded_h < kernel.n || padded_w < kernel.h) {
    fail(ErrorCode::kShapeMismatch,
         "conv2d: kernel " + kernel.str() + " does not fit input " + input.str());
  }
  return Shape{input.n, (padded_h - kernel.n) / geometry.stride + 1,
               (padded_w - kernel.h) / geometry.stride + 1, kernel.c};
}

namespace {

// Kernel tensors reuse Shape as (Kh,Kw,Cin,Cout) = (n,h,w,c).

struct KernelDims {
  std::size_t kh, kw, cin, cout;
};

KernelDims kernel_dims(const Shape& k) { return {k.n, k.h, k.w, k.c}; }


template <typename Fn>
void for_each_tap(const Shape& in, const Shape& out, const KernelDims& k, ConvGeometry g, Fn&& fn) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t n = 0; n < out.n; ++n) {
    for (std::size_t oh = 0; oh < out.h; ++oh) {
      for (std::size_t ow = 0; ow < out.w; ++ow) {
        for (std::size_t kh = 0; kh < k.kh; ++kh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in.h)) continue;
          for (std::size_t kw = 0; kw < k.kw; ++kw) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) - pad;
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in.w)) continue;
            fn(n, oh, ow, kh, kw, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw));
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, ConvGeometry geometry) {
  check_kernel_input(input.shape(), kernel.shape());
  const Shape out_shape = conv2d_output_shape(input.shape(), kernel.shape(), geometry);
  const KernelDims k = kernel_dims(kernel.shape());
  Tensor out(out_shape);
  const double* in = input.raw();
  const double* w = kernel.raw();
  double* o = out.raw();
  for_each_tap(input.shape(), out_shape, k, geometry,
               [&](std::size_t n, std::size_t oh, std::size_t ow, std::size_t kh, std::size_t kw,
                   std::size_t ih, std::size_t iw) {
                 double* orow = o + out.offset(n, oh, ow, 0);
                 const double* irow = in + input.offset(n, ih, iw, 0);
                 const double* wtap = w + (kh * k.kw + kw) * k.cin * k.cout;
                 for (std::size_t ci = 0; ci < k.cin; ++ci) {
                   const double x = irow[ci];
                   const double* wrow = wtap + ci * k.cout;
                   for (std::size_t co = 0; co < k.cout; ++co) orow[co] += x * wrow[co];
                 }
               });
  return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         ConvGeometry geometry) {
  check_kernel_input(input_shape, kernel.shape());
  const Shape out_shape = conv2d_output_shape(input_shape, kernel.shape(), geometry);
  require_same_shape(grad_out.shape(), out_shape, "conv2d_grad_input: grad_out");
  const KernelDims k = kernel_dims(kernel.shape());
  Tensor grad_in(input_shape);
  const double* g = grad_out.raw();
  const double* w = kernel.raw();
  double* gi = grad_in.raw();
  for_each_tap(input_shape, out_shape, k, geometry,
               [&](std::size_t n, std::size_t oh, std::size_t ow, std::size_t kh, std::size_t kw,
                   std::size_t ih, std::size_t iw) {
                 const double* grow = g + grad_out.offset(n, oh, ow, 0);
                 double* girow = gi + grad_in.offset(n, ih, iw, 0);
                 const double* wtap = w + (kh * k.kw + kw) * k.cin * k.cout;
                 for (std::size_t ci = 0; ci < k.cin; ++ci) {
                   const double* wrow = wtap + ci * k.cout;
                   double acc = 0.0;
                   for (std::size_t co = 0; co < k.cout; ++co) acc += wrow[co] * grow[co];
                   girow[ci] += acc;
                 }
               });
  return grad_in;
}

Tensor conv2d_grad_kernel(const Tensor& input, const Tensor& grad_out, const Shape& kernel_shape,
                          ConvGeometry geometry) {
  check_kernel_input(input.shape(), kernel_shape);
  const Shape out_shape = conv2d_output_shape(input.shape(), kernel_shape, geometry);
  require_same_shape(grad_out.shape(), out_shape, "conv2d_grad_kernel: grad_out");
  const KernelDims k = kernel_dims(kernel_shape);
  Tensor grad_k(kernel_shape);
  const double* in = input.raw();
  const double* g = grad_out.raw();
  double* gk = grad_k.raw();
  for_each_tap(input.shape(), out_shape, k, geometry,
               [&](std::size_t n, std::size_t oh, std::size_t ow, std::size_t kh, std::size_t kw,
                   std::size_t ih, std::size_t iw) {
                 const double* grow = g + grad_out.offset(n, oh, ow, 0);
                 const double* irow = in + input.offset(n, ih, iw, 0);
                 double* gtap = gk + (kh * k.kw + kw) * k.cin * k.cout;
                 for (std::size_t ci = 0; ci < k.cin; ++ci) {
                   const double x = irow[ci];
                   double* grow_k = gtap + ci * k.cout;
                   for (std::size_t co = 0; co < k.cout; ++co) grow_k[co] += x * grow[co];
                 }
               });
  return grad_k;
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.shape().h == 1 && x.shape().w == 1, ErrorCode::kShapeMismatch,
          "dense: input must be (N,1,1,C), got " + x.shape().str());
  require(weight.shape().n == 1 && weight.shape().h == 1, ErrorCode::kShapeMismatch,
          "dense: weight must be (1,1,Cin,Cout), got " + weight.shape().str());
  require_same_shape(bias.shape(), Shape{1, 1, 1, weight.shape().c}, "dense: bias");
  Tensor out = conv2d(x, weight, ConvGeometry{});
  add_inplace(out, bias);
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& s = x.shape();
  require(s.h * s.w >= 1, ErrorCode::kInvalidArgument,
          "global_avg_pool: empty spatial extent in " + s.str());
  Tensor out(Shape{s.n, 1, 1, s.c});
  const double inv = 1.0 / static_cast<double>(s.h * s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    double* o = out.raw() + n * s.c;
    for (std::size_t h = 0; h < s.h; ++h) {
      for (std::size_t w = 0; w < s.w; ++w) {
        const double* row = x.raw() + x.offset(n, h, w, 0);
        for (std::size_t c = 0; c < s.c; ++c) o[c] += row[c];
      }
    }
    for (std::size_t c = 0; c < s.c; ++c) o[c] *= inv;
  }
  return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& input_shape) {
  require_same_shape(grad_out.shape(), Shape{input_shape.n, 1, 1, input_shape.c},
                     "global_avg_pool_backward");
  Tensor grad(input_shape);
  const double inv = 1.0 / static_cast<double>(input_shape.h * input_shape.w);
  for (std::size_t n = 0; n < input_shape.n; ++n) {
    const double* g = grad_out.raw() + n * input_shape.c;
    for (std::size_t h = 0; h < input_shape.h; ++h) {
      for (std::size_t w = 0; w < input_shape.w; ++w) {
        double* row = grad.raw() + grad.offset(n, h, w, 0);
        for (std::size_t c = 0; c < input_shape.c; ++c) row[c] = g[c] * inv;
      }
    }
  }
  return grad;
}

Tensor batch_mean(const Tensor& x) {
  const Shape& s = x.shape();
  require(s.h == 1 && s.w == 1, ErrorCode::kShapeMismatch,
          "batch_mean: expected (N,1,1,C), got " + s.str());
  require(s.n >= 1, ErrorCode::kInvalidArgument, "batch_mean: empty batch");
  Tensor out(Shape{1, 1, 1, s.c});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) out[c] += x[n * s.c + c];
  }
  const double inv = 1.0 / static_cast<double>(s.n);
  for (std::size_t c = 0; c < s.c; ++c) out[c] *= inv;
  return out;
}

Tensor batch_mean_backward(const Tensor& grad_out, std::size_t batch) {
  require(grad_out.shape().n == 1 && grad_out.shape().h == 1 && grad_out.shape().w == 1,
          ErrorCode::kShapeMismatch, "batch_mean_backward: expected (1,1,1,C)");
  require(batch >= 1, ErrorCode::kInvalidArgument, "batch_mean_backward: empty batch");
  const std::size_t c = grad_out.shape().c;
  Tensor grad(Shape{batch, 1, 1, c});
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t k = 0; k < c; ++k) grad[n * c + k] = grad_out[k] * inv;
  }
  return grad;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x.shape(), grad_out.shape(), "relu_backward");
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) grad[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return grad;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  return out;
}

namespace {

// Index map of `b` into `a` under the two permitted broadcasts.
template <typename Op>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, Op op, const char* name) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Tensor out(sa);
  if (sa == sb) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
    return out;
  }
  const bool per_channel = sb == Shape{1, 1, 1, sa.c};
  const bool per_sample = sb == Shape{sa.n, 1, 1, sa.c};
  if (!per_channel && !per_sample) {
    fail(ErrorCode::kShapeMismatch, std::string(name) + ": cannot broadcast " + sb.str() +
                                        " onto " + sa.str());
  }
  const std::size_t spatial = sa.h * sa.w;
  for (std::size_t n = 0; n < sa.n; ++n) {
    const double* brow = b.raw() + (per_sample ? n * sa.c : 0);
    for (std::size_t p = 0; p < spatial; ++p) {
      const std::size_t base = (n * spatial + p) * sa.c;
      for (std::size_t c = 0; c < sa.c; ++c) out[base + c] = op(a[base + c], brow[c]);
    }
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return broadcast_apply(a, b, std::plus<>{}, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) {
  return broadcast_apply(a, b, std::minus<>{}, "sub");
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_apply(a, b, std::multiplies<>{}, "mul");
}

Tensor scale(const Tensor& a, double k) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * k;
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) { a = add(a, b); }

Tensor channel_sum(const Tensor& x) {
  const std::size_t c = x.shape().c;
  Tensor out(Shape{1, 1, 1, c});
  if (c == 0) return out;
  const std::size_t rows = x.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.raw() + r * c;
    for (std::size_t k = 0; k < c; ++k) out[k] += row[k];
  }
  return out;
}

double sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return acc;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double mean(const Tensor& x) {
  require(x.size() > 0, ErrorCode::kInvalidArgument, "mean of empty tensor");
  return sum(x) / static_cast<double>(x.size());
}

}  // namespace stq
