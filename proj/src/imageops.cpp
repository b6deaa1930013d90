#include "meshref/imageops.hpp"

#include <algorithm>

namespace meshref {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Sobel responses at (x, y) with replicate padding. Returns false when the
// 3x3 neighborhood touches an invalid pixel.
bool sobel_at(const ScalarImage& img, const std::vector<uint8_t>& valid, int x, int y,
              double& gx, double& gy) {
  static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  gx = 0.0;
  gy = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int sx = clampi(x + dx, 0, img.width - 1);
      const int sy = clampi(y + dy, 0, img.height - 1);
      if (!valid.empty() && !valid[static_cast<size_t>(sy) * img.width + sx]) return false;
      const double v = img.at(sx, sy);
      gx += kx[dy + 1][dx + 1] * v;
      gy += ky[dy + 1][dx + 1] * v;
    }
  }
  return true;
}

constexpr double kSobelG0 = 1e-12;  // below this the magnitude gradient is treated as 0

}  // namespace

EdgeImage sobel_edge_image(const ScalarImage& img, const std::vector<uint8_t>& valid,
                           double tau) {
  if (!(tau > 0.0)) throw ValidationError("sobel_edge_image: tau must be positive");
  EdgeImage edge(img.width, img.height, -1.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double gx, gy;
      if (!sobel_at(img, valid, x, y, gx, gy)) continue;
      const double g = std::sqrt(gx * gx + gy * gy);
      edge.at(x, y) = std::clamp(1.0 - g / tau, -1.0, 1.0);
    }
  }
  return edge;
}

ScalarImage sobel_edge_backward(const ScalarImage& img, const std::vector<uint8_t>& valid,
                                double tau, const ScalarImage& cot_edge) {
  static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  ScalarImage cot(img.width, img.height, 0.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double ce = cot_edge.at(x, y);
      if (ce == 0.0) continue;
      double gx, gy;
      if (!sobel_at(img, valid, x, y, gx, gy)) continue;
      const double g = std::sqrt(gx * gx + gy * gy);
      const double raw = 1.0 - g / tau;
      if (raw <= -1.0 || raw >= 1.0 || g < kSobelG0) continue;  // clamped or flat: subgradient 0
      const double dg = -ce / tau;
      const double dgx = dg * gx / g;
      const double dgy = dg * gy / g;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = clampi(x + dx, 0, img.width - 1);
          const int sy = clampi(y + dy, 0, img.height - 1);
          cot.at(sx, sy) += dgx * kx[dy + 1][dx + 1] + dgy * ky[dy + 1][dx + 1];
        }
      }
    }
  }
  return cot;
}

namespace {

struct Kernel5 {
  double k[5];
  Kernel5() {
    double sum = 0.0;
    for (int i = -2; i <= 2; ++i) {
      k[i + 2] = std::exp(-0.5 * i * i);
      sum += k[i + 2];
    }
    for (double& v : k) v /= sum;
  }
};
const Kernel5 kGauss5;

}  // namespace

ScalarImage gaussian_blur5(const ScalarImage& img, const std::vector<uint8_t>& valid) {
  ScalarImage out(img.width, img.height, 0.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!valid.empty() && !valid[static_cast<size_t>(y) * img.width + x]) continue;
      double acc = 0.0;
      double wsum = 0.0;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          const int sx = clampi(x + dx, 0, img.width - 1);
          const int sy = clampi(y + dy, 0, img.height - 1);
          if (!valid.empty() && !valid[static_cast<size_t>(sy) * img.width + sx]) continue;
          const double w = kGauss5.k[dx + 2] * kGauss5.k[dy + 2];
          acc += w * img.at(sx, sy);
          wsum += w;
        }
      }
      if (wsum > 0.0) out.at(x, y) = acc / wsum;
    }
  }
  return out;
}

ScalarImage gaussian_blur5_adjoint(const std::vector<uint8_t>& valid,
                                   const ScalarImage& cot_out) {
  ScalarImage cot(cot_out.width, cot_out.height, 0.0);
  for (int y = 0; y < cot_out.height; ++y) {
    for (int x = 0; x < cot_out.width; ++x) {
      if (!valid.empty() && !valid[static_cast<size_t>(y) * cot_out.width + x]) continue;
      const double co = cot_out.at(x, y);
      if (co == 0.0) continue;
      double wsum = 0.0;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          const int sx = clampi(x + dx, 0, cot_out.width - 1);
          const int sy = clampi(y + dy, 0, cot_out.height - 1);
          if (!valid.empty() && !valid[static_cast<size_t>(sy) * cot_out.width + sx]) continue;
          wsum += kGauss5.k[dx + 2] * kGauss5.k[dy + 2];
        }
      }
      if (wsum <= 0.0) continue;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          const int sx = clampi(x + dx, 0, cot_out.width - 1);
          const int sy = clampi(y + dy, 0, cot_out.height - 1);
          if (!valid.empty() && !valid[static_cast<size_t>(sy) * cot_out.width + sx]) continue;
          cot.at(sx, sy) += co * kGauss5.k[dx + 2] * kGauss5.k[dy + 2] / wsum;
        }
      }
    }
  }
  return cot;
}

void spatial_gradients(const ScalarImage& img, ScalarImage& grad_u, ScalarImage& grad_v) {
  grad_u = ScalarImage(img.width, img.height, 0.0);
  grad_v = ScalarImage(img.width, img.height, 0.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (x + 1 < img.width) grad_u.at(x, y) = img.at(x + 1, y) - img.at(x, y);
      if (y + 1 < img.height) grad_v.at(x, y) = img.at(x, y + 1) - img.at(x, y);
    }
  }
}

ScalarImage spatial_gradients_adjoint(const ScalarImage& cot_u, const ScalarImage& cot_v) {
  ScalarImage cot(cot_u.width, cot_u.height, 0.0);
  for (int y = 0; y < cot_u.height; ++y) {
    for (int x = 0; x < cot_u.width; ++x) {
      if (x + 1 < cot_u.width) {
        const double g = cot_u.at(x, y);
        cot.at(x + 1, y) += g;
        cot.at(x, y) -= g;
      }
      if (y + 1 < cot_u.height) {
        const double g = cot_v.at(x, y);
        cot.at(x, y + 1) += g;
        cot.at(x, y) -= g;
      }
    }
  }
  return cot;
}

Normalize01Result normalize01(const ScalarImage& img, const std::vector<uint8_t>& valid) {
  Normalize01Result r;
  r.image = ScalarImage(img.width, img.height, 0.0);
  bool any = false;
  double lo = 0.0, hi = 0.0;
  for (size_t i = 0; i < img.values.size(); ++i) {
    if (!valid.empty() && !valid[i]) continue;
    const double v = img.values[i];
    if (!any) {
      lo = hi = v;
      any = true;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!any) {
    r.degenerate = true;
    return r;
  }
  r.min = lo;
  r.max = hi;
  if (!(hi > lo)) {
    r.degenerate = true;
    for (size_t i = 0; i < img.values.size(); ++i) {
      if (valid.empty() || valid[i]) r.image.values[i] = 0.5;
    }
    return r;
  }
  const double inv = 1.0 / (hi - lo);
  for (size_t i = 0; i < img.values.size(); ++i) {
    if (valid.empty() || valid[i]) r.image.values[i] = (img.values[i] - lo) * inv;
  }
  return r;
}

Normalize01Result normalize01(const DepthMap& depth) {
  ScalarImage img(depth.width, depth.height, 0.0);
  img.values = depth.values;
  return normalize01(img, depth.valid);
}

BilinearTaps bilinear_taps(int width, int height, double x, double y) {
  BilinearTaps t;
  double cx = x, cy = y;
  if (cx < 0.0) {
    cx = 0.0;
    t.clamped_x = true;
  }
  if (cx > width - 1.0) {
    cx = width - 1.0;
    t.clamped_x = true;
  }
  if (cy < 0.0) {
    cy = 0.0;
    t.clamped_y = true;
  }
  if (cy > height - 1.0) {
    cy = height - 1.0;
    t.clamped_y = true;
  }
  t.x0 = std::min(static_cast<int>(std::floor(cx)), width - 2 < 0 ? 0 : width - 2);
  t.y0 = std::min(static_cast<int>(std::floor(cy)), height - 2 < 0 ? 0 : height - 2);
  t.x0 = std::max(t.x0, 0);
  t.y0 = std::max(t.y0, 0);
  t.x1 = std::min(t.x0 + 1, width - 1);
  t.y1 = std::min(t.y0 + 1, height - 1);
  t.fx = cx - t.x0;
  t.fy = cy - t.y0;
  t.w00 = (1.0 - t.fx) * (1.0 - t.fy);
  t.w10 = t.fx * (1.0 - t.fy);
  t.w01 = (1.0 - t.fx) * t.fy;
  t.w11 = t.fx * t.fy;
  return t;
}

double bilinear_sample(const ScalarImage& img, double x, double y) {
  const BilinearTaps t = bilinear_taps(img.width, img.height, x, y);
  return t.w00 * img.at(t.x0, t.y0) + t.w10 * img.at(t.x1, t.y0) +
         t.w01 * img.at(t.x0, t.y1) + t.w11 * img.at(t.x1, t.y1);
}

BilinearSample bilinear_sample_grad(const ScalarImage& img, double x, double y) {
  BilinearSample s;
  s.taps = bilinear_taps(img.width, img.height, x, y);
  const BilinearTaps& t = s.taps;
  const double v00 = img.at(t.x0, t.y0);
  const double v10 = img.at(t.x1, t.y0);
  const double v01 = img.at(t.x0, t.y1);
  const double v11 = img.at(t.x1, t.y1);
  s.value = t.w00 * v00 + t.w10 * v10 + t.w01 * v01 + t.w11 * v11;
  if (!t.clamped_x) s.dx = (1.0 - t.fy) * (v10 - v00) + t.fy * (v11 - v01);
  if (!t.clamped_y) s.dy = (1.0 - t.fx) * (v01 - v00) + t.fx * (v11 - v10);
  return s;
}

Eigen::Vector3d bilinear_sample_color(const ColorImage& img, double x, double y) {
  const BilinearTaps t = bilinear_taps(img.width, img.height, x, y);
  return t.w00 * img.pixel(t.x0, t.y0) + t.w10 * img.pixel(t.x1, t.y0) +
         t.w01 * img.pixel(t.x0, t.y1) + t.w11 * img.pixel(t.x1, t.y1);
}

MaskedSample bilinear_sample_masked(const ScalarImage& img, const std::vector<uint8_t>& valid,
                                    double x, double y) {
  MaskedSample s;
  s.taps = bilinear_taps(img.width, img.height, x, y);
  BilinearTaps& t = s.taps;
  const int xs[4] = {t.x0, t.x1, t.x0, t.x1};
  const int ys[4] = {t.y0, t.y0, t.y1, t.y1};
  double* ws[4] = {&t.w00, &t.w10, &t.w01, &t.w11};
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    const bool ok = valid.empty() || valid[static_cast<size_t>(ys[i]) * img.width + xs[i]];
    if (!ok) *ws[i] = 0.0;
    total += *ws[i];
  }
  if (total <= 0.0) return s;
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    *ws[i] /= total;
    acc += *ws[i] * img.at(xs[i], ys[i]);
  }
  s.value = acc;
  s.ok = true;
  return s;
}

}  // namespace meshref
