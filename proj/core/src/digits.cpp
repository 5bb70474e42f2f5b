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

#include "stq/digits.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "stq/error.hpp"

namespace stq {
namespace {

struct Point {
  double x;
  double y;
};
using Stroke = std::vector<Point>;

Stroke ellipse(double cx, double cy, double rx, double ry, double from = 0.0,
               double to = 2.0 * std::numbers::pi, int steps = 16) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    const double t = from + (to - from) * i / steps;
    s.push_back({cx + rx * std::sin(t), cy - ry * std::cos(t)});
  }
  return s;
}

// Skeletons in the unit square, y pointing down.
std::vector<Stroke> skeleton(int digit) {
  switch (digit) {
    case 0: return {ellipse(0.5, 0.5, 0.2, 0.3)};
    case 1: return {{{0.38, 0.3}, {0.52, 0.2}, {0.52, 0.8}}};
    case 2:
      return {{{0.3, 0.35}, {0.4, 0.22}, {0.6, 0.22}, {0.7, 0.35}, {0.65, 0.5}, {0.3, 0.8},
               {0.72, 0.8}}};
    case 3:
      return {{{0.3, 0.25}, {0.6, 0.2}, {0.7, 0.32}, {0.6, 0.47}, {0.45, 0.5}, {0.6, 0.53},
               {0.72, 0.66}, {0.6, 0.8}, {0.3, 0.76}}};
    case 4: return {{{0.62, 0.8}, {0.62, 0.2}, {0.28, 0.6}, {0.75, 0.6}}};
    case 5:
      return {{{0.7, 0.2}, {0.36, 0.2}, {0.33, 0.47}, {0.55, 0.44}, {0.7, 0.57}, {0.66, 0.75},
               {0.5, 0.8}, {0.3, 0.75}}};
    case 6:
      return {{{0.65, 0.2}, {0.45, 0.3}, {0.33, 0.55}, {0.35, 0.72}, {0.5, 0.8}, {0.65, 0.72},
               {0.67, 0.58}, {0.5, 0.5}, {0.35, 0.58}}};
    case 7: return {{{0.28, 0.2}, {0.72, 0.2}, {0.45, 0.8}}};
    case 8: return {ellipse(0.5, 0.34, 0.14, 0.14), ellipse(0.5, 0.65, 0.17, 0.16)};
    case 9: return {ellipse(0.5, 0.36, 0.15, 0.15), {{0.65, 0.36}, {0.6, 0.8}}};
    default: fail(ErrorCode::kInvalidArgument, "make_digits: digit outside [0, 9]");
  }
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx);
  const double ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

// Anti-aliased stroke: full intensity within half the width, linear falloff
// over one further pixel.
void draw(std::vector<double>& img, std::size_t size, const Stroke& s, double width,
          double intensity) {
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const Point p{c + 0.5, r + 0.5};
      double d = 1e9;
      for (std::size_t k = 0; k + 1 < s.size(); ++k) d = std::min(d, segment_distance(p, s[k], s[k + 1]));
      const double v = std::clamp(0.5 * width + 0.5 - d, 0.0, 1.0) * intensity;
      double& px = img[r * size + c];
      px = std::max(px, v);
    }
  }
}

}  // namespace

Dataset make_digits(std::size_t count, std::uint64_t seed, const DigitStyle& style) {
  require(style.size >= 8, ErrorCode::kInvalidArgument, "make_digits: size must be >= 8");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t size = style.size;
  const double px = static_cast<double>(size);
  Dataset d;
  d.classes = 10;
  d.images = Tensor(Shape{count, size, size, 1});
  d.labels.resize(count);
  std::vector<double> img(size * size);
  for (std::size_t i = 0; i < count; ++i) {
    const int digit = static_cast<int>(i % 10);
    d.labels[i] = digit;
    std::fill(img.begin(), img.end(), 0.0);
    const double angle = style.max_rotation * u(rng);
    const double scale = style.min_scale + (style.max_scale - style.min_scale) * u01(rng);
    const double shear = style.max_shear * u(rng);
    const double tx = style.max_shift * u(rng);
    const double ty = style.max_shift * u(rng);
    const double width = style.min_thickness + (style.max_thickness - style.min_thickness) * u01(rng);
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    auto place = [&](Point p) {
      const double x = (p.x - 0.5 + style.jitter * u(rng)) * scale;
      const double y = (p.y - 0.5 + style.jitter * u(rng)) * scale;
      const double xs = x + shear * y;
      return Point{(ca * xs - sa * y + 0.5) * px + tx, (sa * xs + ca * y + 0.5) * px + ty};
    };
    for (const Stroke& s : skeleton(digit)) {
      Stroke placed;
      for (Point p : s) placed.push_back(place(p));
      draw(img, size, placed, width, 0.85 + 0.15 * u01(rng));
    }
    const std::size_t strays =
        style.clutter == 0 ? 0 : static_cast<std::size_t>(u01(rng) * (style.clutter + 1));
    for (std::size_t k = 0; k < std::min(strays, style.clutter); ++k) {
      const Point a{u01(rng) * px, u01(rng) * px};
      const Point b{a.x + 4.0 * u(rng), a.y + 4.0 * u(rng)};
      draw(img, size, {a, b}, 1.0, 0.3 + 0.4 * u01(rng));
    }
    double* out = d.images.raw() + i * size * size;
    for (std::size_t k = 0; k < img.size(); ++k) {
      out[k] = std::clamp(img[k] + style.noise * u01(rng), 0.0, 1.0);
    }
  }
  return d;
}

}  // namespace stq
