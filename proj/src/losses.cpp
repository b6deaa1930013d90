#include "meshref/losses.hpp"

#include "meshref/imageops.hpp"

#include <algorithm>

namespace meshref {

namespace {

constexpr double kZeroLoss = 1e-300;  // below this an RMS root has zero subgradient

void check_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw ValidationError(std::string("loss term not finite: ") + name);
}

}  // namespace

LossBreakdown total_loss(double geo, double photo, double smooth, double poisson, double edge,
                         const LossWeights& w, Stage stage) {
  check_finite(geo, "geo");
  check_finite(photo, "photo");
  check_finite(smooth, "rs");
  check_finite(poisson, "rp");
  check_finite(edge, "re");
  LossBreakdown b;
  b.geo = geo;
  b.photo = photo;
  b.smooth = smooth;
  b.poisson = poisson;
  b.edge = edge;
  const double photo_w = stage == Stage::local ? w.photo : 0.0;
  b.total = w.geo * geo + photo_w * photo + w.smooth * smooth + w.poisson * poisson + w.edge * edge;
  check_finite(b.total, "total");
  return b;
}

RSmoothResult r_smooth(const DepthMap& rendered, const std::vector<uint8_t>& mask) {
  RSmoothResult r;
  r.cot_depth = ScalarImage(rendered.width, rendered.height, 0.0);
  ScalarImage img(rendered.width, rendered.height, 0.0);
  img.values = rendered.values;
  for (size_t i = 0; i < img.values.size(); ++i) {
    if (!mask[i]) img.values[i] = 0.0;
  }
  const ScalarImage blurred = gaussian_blur5(img, mask);
  size_t n = 0;
  double sum_sq = 0.0;
  ScalarImage res(rendered.width, rendered.height, 0.0);
  for (size_t i = 0; i < img.values.size(); ++i) {
    if (!mask[i]) continue;
    res.values[i] = img.values[i] - blurred.values[i];
    sum_sq += res.values[i] * res.values[i];
    ++n;
  }
  if (n == 0) return r;
  r.value = std::sqrt(sum_sq / n);
  if (r.value < kZeroLoss) return r;
  // dL/dD = (I - B)^T res / (L n)
  const double scale = 1.0 / (r.value * n);
  const ScalarImage adj = gaussian_blur5_adjoint(mask, res);
  for (size_t i = 0; i < img.values.size(); ++i) {
    if (!mask[i]) continue;
    r.cot_depth.values[i] = scale * (res.values[i] - adj.values[i]);
  }
  return r;
}

REdgeResult r_edge(const DepthMap& rendered, const EdgeImage& mono_edges, const DepthMesh& mesh,
                   double tau) {
  REdgeResult r;
  const int w = rendered.width, h = rendered.height;
  r.cot_depth = ScalarImage(w, h, 0.0);
  r.cot_du.assign(mesh.vertex_count(), 0.0);
  r.cot_dv.assign(mesh.vertex_count(), 0.0);

  const Normalize01Result norm = normalize01(rendered);
  const EdgeImage render_edges = sobel_edge_image(norm.image, rendered.valid, tau);

  // alignment of clamped edge images, full frame
  const size_t npix = static_cast<size_t>(w) * h;
  double sum_sq = 0.0;
  ScalarImage diff(w, h, 0.0);
  for (size_t i = 0; i < npix; ++i) {
    const double a = std::max(0.0, render_edges.values[i]);
    const double b = std::max(0.0, mono_edges.values[i]);
    diff.values[i] = a - b;
    sum_sq += diff.values[i] * diff.values[i];
  }
  r.term_align = std::sqrt(sum_sq / npix);
  if (r.term_align >= kZeroLoss) {
    ScalarImage cot_edge(w, h, 0.0);
    const double scale = 1.0 / (r.term_align * npix);
    for (size_t i = 0; i < npix; ++i) {
      if (render_edges.values[i] > 0.0) cot_edge.values[i] = scale * diff.values[i];
    }
    const ScalarImage cot_norm = sobel_edge_backward(norm.image, rendered.valid, tau, cot_edge);
    const double s = norm.scale();
    for (size_t i = 0; i < npix; ++i) {
      if (rendered.valid[i]) r.cot_depth.values[i] = cot_norm.values[i] * s;
    }
  }

  // pull vertices toward mono discontinuities
  const int nv = mesh.vertex_count();
  if (nv > 0) {
    double acc = 0.0;
    for (int j = 0; j < nv; ++j) {
      const double px = ndc_to_pixel(mesh.u[j] + mesh.du[j], mesh.image_width) - 0.5;
      const double py = ndc_to_pixel(mesh.v[j] + mesh.dv[j], mesh.image_height) - 0.5;
      const BilinearSample s = bilinear_sample_grad(mono_edges, px, py);
      acc += s.value;
      r.cot_du[j] = s.dx * (mesh.image_width / 2.0) / nv;
      r.cot_dv[j] = s.dy * (mesh.image_height / 2.0) / nv;
    }
    r.term_pull = acc / nv;
  }
  r.value = r.term_align + r.term_pull;
  return r;
}

RPoissonResult r_poisson(const DepthMap& rendered, const ScalarImage& mono,
                         const EdgeImage& mono_edges) {
  RPoissonResult r;
  const int w = rendered.width, h = rendered.height;
  r.cot_depth = ScalarImage(w, h, 0.0);
  const Normalize01Result norm = normalize01(rendered);
  ScalarImage mono_gu, mono_gv;
  spatial_gradients(mono, mono_gu, mono_gv);

  const size_t npix = static_cast<size_t>(w) * h;
  ScalarImage du(w, h, 0.0), dv(w, h, 0.0);  // masked residuals
  double sum_u = 0.0, sum_v = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double m = std::max(0.0, mono_edges.at(x, y));
      if (m == 0.0) continue;
      if (x + 1 < w && rendered.is_valid(x, y) && rendered.is_valid(x + 1, y)) {
        const double g = norm.image.at(x + 1, y) - norm.image.at(x, y);
        du.at(x, y) = m * (g - mono_gu.at(x, y));
        sum_u += du.at(x, y) * du.at(x, y);
      }
      if (y + 1 < h && rendered.is_valid(x, y) && rendered.is_valid(x, y + 1)) {
        const double g = norm.image.at(x, y + 1) - norm.image.at(x, y);
        dv.at(x, y) = m * (g - mono_gv.at(x, y));
        sum_v += dv.at(x, y) * dv.at(x, y);
      }
    }
  }
  const double value_u = std::sqrt(sum_u / npix);
  const double value_v = std::sqrt(sum_v / npix);
  r.value = value_u + value_v;

  const double s = norm.scale();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double m = std::max(0.0, mono_edges.at(x, y));
      if (m == 0.0) continue;
      if (value_u >= kZeroLoss && du.at(x, y) != 0.0 && x + 1 < w) {
        const double g = du.at(x, y) * m / (value_u * npix) * s;
        r.cot_depth.at(x + 1, y) += g;
        r.cot_depth.at(x, y) -= g;
      }
      if (value_v >= kZeroLoss && dv.at(x, y) != 0.0 && y + 1 < h) {
        const double g = dv.at(x, y) * m / (value_v * npix) * s;
        r.cot_depth.at(x, y + 1) += g;
        r.cot_depth.at(x, y) -= g;
      }
    }
  }
  return r;
}

double huber(double a) {
  const double abs_a = std::abs(a);
  if (abs_a <= kHuberDelta) return 0.5 * a * a;
  return kHuberDelta * (abs_a - 0.5 * kHuberDelta);
}

double huber_grad(double a) {
  if (std::abs(a) <= kHuberDelta) return a;
  return a > 0.0 ? kHuberDelta : -kHuberDelta;
}

LGeoResult l_geo_map(const DepthMap& rendered, const SparsePointCloud& cloud, const View& ref) {
  if (cloud.points.empty()) throw ValidationError("l_geo_map: empty point cloud");
  LGeoResult r;
  r.cot_depth = ScalarImage(rendered.width, rendered.height, 0.0);
  ScalarImage img(rendered.width, rendered.height, 0.0);
  img.values = rendered.values;
  for (size_t i = 0; i < img.values.size(); ++i) {
    if (!rendered.valid[i]) img.values[i] = 0.0;
  }

  struct Hit {
    MaskedSample sample;
    double z_point;
  };
  std::vector<Hit> hits;
  size_t in_frame = 0, missed = 0;
  for (const auto& p : cloud.points) {
    const Eigen::Vector3d q = ref.pose.world_to_camera(p);
    const PixelProjection pr = project_to_pixel(q, ref.intrinsics);
    if (!(pr.depth > 0.0)) continue;
    if (pr.u < 0.0 || pr.u > ref.intrinsics.width || pr.v < 0.0 || pr.v > ref.intrinsics.height)
      continue;
    ++in_frame;
    const MaskedSample s =
        bilinear_sample_masked(img, rendered.valid, pr.u - 0.5, pr.v - 0.5);
    // require full support so the sample is a true interpolation
    if (!s.ok || s.taps.w00 + s.taps.w10 + s.taps.w01 + s.taps.w11 < 1.0 - 1e-12) {
      ++missed;
      continue;
    }
    hits.push_back({s, pr.depth});
  }
  if (in_frame == 0) return r;
  r.miss_fraction = static_cast<double>(missed) / in_frame;

  for (const Hit& hit : hits) {
    const double res = hit.sample.value - hit.z_point;
    r.value += huber(res) / hit.z_point;
    const double g = huber_grad(res) / hit.z_point / in_frame;
    const BilinearTaps& t = hit.sample.taps;
    r.cot_depth.at(t.x0, t.y0) += g * t.w00;
    r.cot_depth.at(t.x1, t.y0) += g * t.w10;
    r.cot_depth.at(t.x0, t.y1) += g * t.w01;
    r.cot_depth.at(t.x1, t.y1) += g * t.w11;
  }
  r.value /= in_frame;
  return r;
}

PointResidualData prepare_point_residuals(const DepthMap& mono_global, double z_min, double z_max,
                                          const SparsePointCloud& cloud, const View& ref) {
  if (cloud.points.empty()) throw ValidationError("point residuals: empty point cloud");
  PointResidualData data;
  ScalarImage img(mono_global.width, mono_global.height, 0.0);
  img.values = mono_global.values;
  const double span = z_max > z_min ? z_max - z_min : 1.0;
  for (const auto& p : cloud.points) {
    const Eigen::Vector3d q = ref.pose.world_to_camera(p);
    const PixelProjection pr = project_to_pixel(q, ref.intrinsics);
    if (!(pr.depth > 0.0)) continue;
    if (pr.u < 0.0 || pr.u > ref.intrinsics.width || pr.v < 0.0 || pr.v > ref.intrinsics.height)
      continue;
    const MaskedSample s =
        bilinear_sample_masked(img, mono_global.valid, pr.u - 0.5, pr.v - 0.5);
    if (!s.ok) continue;
    data.u_ndc.push_back(pixel_to_ndc(pr.u, ref.intrinsics.width));
    data.v_ndc.push_back(pixel_to_ndc(pr.v, ref.intrinsics.height));
    data.z_norm.push_back((s.value - z_min) / span);
    data.z_global.push_back(s.value);
    data.z_point.push_back(pr.depth);
  }
  return data;
}

CoarseResidualResult coarse_point_residual(const PointResidualData& data,
                                           std::span<const double> offset,
                                           std::span<const double> scale) {
  const size_t n = data.count();
  if (offset.size() != n || scale.size() != n)
    throw ValidationError("coarse_point_residual: field output size mismatch");
  CoarseResidualResult r;
  r.cot_offset.assign(n, 0.0);
  r.cot_scale.assign(n, 0.0);
  if (n == 0) return r;
  for (size_t i = 0; i < n; ++i) {
    const double z_c = data.z_global[i] * (1.0 + scale[i]) + offset[i];
    const double res = z_c - data.z_point[i];
    r.value += huber(res) / data.z_point[i];
    const double g = huber_grad(res) / data.z_point[i] / n;
    r.cot_offset[i] = g;
    r.cot_scale[i] = g * data.z_global[i];
  }
  r.value /= n;
  return r;
}

CoarseResidualFull coarse_point_residual_full(const DepthMap& mono_global, double z_min,
                                              double z_max, const FieldParams& params,
                                              const FieldConfig& config,
                                              const SparsePointCloud& cloud, const View& ref) {
  const PointResidualData data = prepare_point_residuals(mono_global, z_min, z_max, cloud, ref);
  const FieldEval ev = field_eval(params, config, data.u_ndc, data.v_ndc, data.z_norm);
  std::vector<double> o(ev.offset.data(), ev.offset.data() + ev.offset.size());
  std::vector<double> s(ev.scale.data(), ev.scale.data() + ev.scale.size());
  const CoarseResidualResult res = coarse_point_residual(data, o, s);
  CoarseResidualFull full;
  full.value = res.value;
  full.param_grads = field_backward(params, config, ev, res.cot_offset, res.cot_scale, data.u_ndc,
                                    data.v_ndc, data.z_norm)
                         .params;
  return full;
}

LPhotoResult l_photo(const RenderOutput& rendered, const ColorImage& captured, double tau) {
  if (rendered.width != captured.width || rendered.height != captured.height)
    throw ValidationError("l_photo: image dimensions differ");
  LPhotoResult r;
  const int w = rendered.width, h = rendered.height;
  const size_t npix = static_cast<size_t>(w) * h;
  r.cot_color.assign(npix * 3, 0.0);
  r.cot_depth = ScalarImage(w, h, 0.0);

  size_t n_cov = 0;
  for (size_t i = 0; i < npix; ++i) n_cov += rendered.coverage[i];
  if (n_cov == 0) return r;

  const Normalize01Result norm = normalize01(rendered.depth);
  const EdgeImage edges = sobel_edge_image(norm.image, rendered.depth.valid, tau);

  std::vector<double> mask(npix, 0.0);
  double sum = 0.0;
  std::vector<double> err(npix * 3, 0.0);
  for (size_t i = 0; i < npix; ++i) {
    if (!rendered.coverage[i]) continue;
    mask[i] = std::max(0.0, edges.values[i]);
    double e2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      err[3 * i + k] = rendered.color.rgb[3 * i + k] - captured.rgb[3 * i + k];
      e2 += err[3 * i + k] * err[3 * i + k];
    }
    sum += mask[i] * mask[i] * e2;
  }
  r.value = std::sqrt(sum / n_cov);
  if (r.value < kZeroLoss) return r;

  const double scale = 1.0 / (r.value * n_cov);
  ScalarImage cot_edge(w, h, 0.0);
  for (size_t i = 0; i < npix; ++i) {
    if (!rendered.coverage[i] || mask[i] == 0.0) continue;
    double e2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      r.cot_color[3 * i + k] = scale * mask[i] * mask[i] * err[3 * i + k];
      e2 += err[3 * i + k] * err[3 * i + k];
    }
    if (edges.values[i] > 0.0) cot_edge.values[i] = scale * mask[i] * e2;
  }
  const ScalarImage cot_norm = sobel_edge_backward(norm.image, rendered.depth.valid, tau, cot_edge);
  const double s = norm.scale();
  for (size_t i = 0; i < npix; ++i) {
    if (rendered.depth.valid[i]) r.cot_depth.values[i] = cot_norm.values[i] * s;
  }
  return r;
}

}  // namespace meshref
