#include "meshref/rasterizer.hpp"

#include <algorithm>

namespace meshref {

namespace {

constexpr double kMinW = 1e-9;       // cull triangles reaching the camera plane
constexpr double kMinArea = 1e-14;   // degenerate screen triangles (pixels^2)

// The projection matrix expects a y-up, z-backward camera frame while poses
// use the y-down frame; conjugating the relative transform with this flip
// keeps both conventions consistent.
Eigen::Matrix4d y_flip() {
  Eigen::Matrix4d f = Eigen::Matrix4d::Identity();
  f(1, 1) = -1.0;
  f(2, 2) = -1.0;
  return f;
}

struct EdgeFn {
  // e(a, b; p) = (b-a) x (p-a), affine in p
  static double eval(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
  }
};

// Shared-edge tie break: include a zero-area-side pixel only for edges whose
// oriented direction passes this test, so shared edges are rasterized once.
bool edge_includes_zero(double dx, double dy) { return dy < 0.0 || (dy == 0.0 && dx > 0.0); }

}  // namespace

void VertexParamGrads::add_scaled(const VertexParamGrads& other, double w) {
  for (size_t i = 0; i < du.size(); ++i) {
    du[i] += w * other.du[i];
    dv[i] += w * other.dv[i];
    fz[i] += w * other.fz[i];
    offset[i] += w * other.offset[i];
    scale[i] += w * other.scale[i];
  }
}

ClipPositions apply_vertex_params(const DepthMesh& mesh, std::span<const double> field_offset,
                                  std::span<const double> field_scale,
                                  const ProjectionMatrix& p0) {
  const int n = mesh.vertex_count();
  if (!field_offset.empty() && static_cast<int>(field_offset.size()) != n)
    throw ValidationError("apply_vertex_params: field offset size mismatch");
  if (!field_scale.empty() && static_cast<int>(field_scale.size()) != n)
    throw ValidationError("apply_vertex_params: field scale size mismatch");

  const double p22 = p0.m(2, 2), p23 = p0.m(2, 3);
  const double lo = p0.near_plane + kFrustumEps;
  const double hi = p0.far_plane - kFrustumEps;

  ClipPositions out;
  out.proj = p0;
  out.clip.resize(n);
  out.tape.resize(n);
  for (int j = 0; j < n; ++j) {
    ClipPositions::Tape& t = out.tape[j];
    t.nx = mesh.u[j] + mesh.du[j];
    t.ny = mesh.v[j] + mesh.dv[j];
    t.fz = mesh.fz[j];
    t.s = field_scale.empty() ? 0.0 : field_scale[j];
    const double o = field_offset.empty() ? 0.0 : field_offset[j];
    t.z_lin = p23 / (p22 + mesh.z[j]);
    t.z_new = (t.z_lin * (1.0 + t.s) + o) / t.fz;
    // frustum clamp; a non-positive depth lands on the far bound
    if (t.z_new >= lo && t.z_new <= hi) {
      t.h = t.z_new;
      t.in_range = true;
    } else if (t.z_new > hi) {
      t.h = hi;
    } else if (t.z_new > 0.0) {
      t.h = lo;
    } else {
      t.h = hi;
    }
    out.clip[j] = Eigen::Vector4d(t.h * t.nx, t.h * t.ny, p23 - t.h * p22, t.h);
    if (!out.clip[j].allFinite())
      throw ValidationError("apply_vertex_params: non-finite position for vertex " +
                            std::to_string(j));
  }
  return out;
}

void apply_vertex_params_backward(const ClipPositions& positions,
                                  const std::vector<Eigen::Vector4d>& cot_clip,
                                  VertexParamGrads& grads) {
  const int n = static_cast<int>(positions.clip.size());
  if (static_cast<int>(cot_clip.size()) != n)
    throw ValidationError("apply_vertex_params_backward: cotangent size mismatch");
  const double p22 = positions.proj.m(2, 2);
  for (int j = 0; j < n; ++j) {
    const ClipPositions::Tape& t = positions.tape[j];
    const Eigen::Vector4d& dc = cot_clip[j];
    const double dh = dc[0] * t.nx + dc[1] * t.ny - dc[2] * p22 + dc[3];
    grads.du[j] += dc[0] * t.h;
    grads.dv[j] += dc[1] * t.h;
    const double dz_new = t.in_range ? dh : 0.0;
    grads.offset[j] += dz_new / t.fz;
    grads.scale[j] += dz_new * t.z_lin / t.fz;
    grads.fz[j] += -dz_new * t.z_new / t.fz;
  }
}

RenderOutput render(const ClipPositions& positions, const DepthMesh& mesh, const View& target,
                    const ProjectionMatrix& p_target, const View& ref,
                    const ProjectionMatrix& p_ref) {
  if (static_cast<int>(positions.clip.size()) != mesh.vertex_count())
    throw ValidationError("render: clip positions do not match mesh");

  const int w = target.intrinsics.width;
  const int h = target.intrinsics.height;
  RenderOutput out;
  out.width = w;
  out.height = h;
  out.color = ColorImage(w, h);
  out.depth = DepthMap(w, h);
  out.coverage.assign(static_cast<size_t>(w) * h, 0);
  out.tri_index.assign(static_cast<size_t>(w) * h, -1);
  out.bary.assign(static_cast<size_t>(w) * h, {0.0, 0.0, 0.0});

  const Eigen::Matrix4d flip = y_flip();
  out.target_from_ref =
      p_target.m * flip * relative_transform(target.pose, ref.pose) * flip * p_ref.m.inverse();

  const int nv = mesh.vertex_count();
  out.clip_target.resize(nv);
  for (int j = 0; j < nv; ++j) out.clip_target[j] = out.target_from_ref * positions.clip[j];

  std::vector<double> zbuf(static_cast<size_t>(w) * h, std::numeric_limits<double>::infinity());

  for (size_t fi = 0; fi < mesh.faces.size(); ++fi) {
    const auto& f = mesh.faces[fi];
    const Eigen::Vector4d& c0 = out.clip_target[f[0]];
    const Eigen::Vector4d& c1 = out.clip_target[f[1]];
    const Eigen::Vector4d& c2 = out.clip_target[f[2]];
    if (c0[3] <= kMinW || c1[3] <= kMinW || c2[3] <= kMinW) continue;

    const double sx0 = ndc_to_pixel(c0[0] / c0[3], w), sy0 = ndc_to_pixel(c0[1] / c0[3], h);
    const double sx1 = ndc_to_pixel(c1[0] / c1[3], w), sy1 = ndc_to_pixel(c1[1] / c1[3], h);
    const double sx2 = ndc_to_pixel(c2[0] / c2[3], w), sy2 = ndc_to_pixel(c2[1] / c2[3], h);
    const double nz0 = c0[2] / c0[3], nz1 = c1[2] / c1[3], nz2 = c2[2] / c2[3];

    const double area2 = EdgeFn::eval(sx0, sy0, sx1, sy1, sx2, sy2);
    if (std::abs(area2) < kMinArea) continue;
    const double sign = area2 > 0.0 ? 1.0 : -1.0;

    const int x_lo = std::max(0, static_cast<int>(std::floor(std::min({sx0, sx1, sx2}) - 0.5)));
    const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(std::max({sx0, sx1, sx2}) - 0.5)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(std::min({sy0, sy1, sy2}) - 0.5)));
    const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(std::max({sy0, sy1, sy2}) - 0.5)));
    if (x_lo > x_hi || y_lo > y_hi) continue;

    for (int py = y_lo; py <= y_hi; ++py) {
      const double cy = py + 0.5;
      for (int px = x_lo; px <= x_hi; ++px) {
        const double cx = px + 0.5;
        const double e0 = EdgeFn::eval(sx1, sy1, sx2, sy2, cx, cy);
        const double e1 = EdgeFn::eval(sx2, sy2, sx0, sy0, cx, cy);
        const double e2 = EdgeFn::eval(sx0, sy0, sx1, sy1, cx, cy);
        bool inside = true;
        const double es[3] = {e0, e1, e2};
        const double ax[3] = {sx1, sx2, sx0}, ay[3] = {sy1, sy2, sy0};
        const double bx[3] = {sx2, sx0, sx1}, by[3] = {sy2, sy0, sy1};
        for (int k = 0; k < 3 && inside; ++k) {
          const double se = sign * es[k];
          if (se > 0.0) continue;
          if (se < 0.0) {
            inside = false;
          } else {
            inside = edge_includes_zero(sign * (bx[k] - ax[k]), sign * (by[k] - ay[k]));
          }
        }
        if (!inside) continue;

        const double znd = (e0 * nz0 + e1 * nz1 + e2 * nz2) / area2;
        const double b0r = e0 / c0[3], b1r = e1 / c1[3], b2r = e2 / c2[3];
        const double bsum = b0r + b1r + b2r;
        if (bsum == 0.0) continue;
        const double depth = (e0 + e1 + e2) / bsum;  // perspective-correct linear depth
        if (!(depth >= p_target.near_plane && depth <= p_target.far_plane)) continue;

        const size_t idx = static_cast<size_t>(py) * w + px;
        if (znd > zbuf[idx]) continue;
        if (znd == zbuf[idx] && out.tri_index[idx] >= 0 &&
            out.tri_index[idx] < static_cast<int>(fi))
          continue;
        zbuf[idx] = znd;
        out.tri_index[idx] = static_cast<int>(fi);
        out.coverage[idx] = 1;
        const double b0 = b0r / bsum, b1 = b1r / bsum, b2 = b2r / bsum;
        out.bary[idx] = {b0, b1, b2};
        out.depth.values[idx] = depth;
        out.depth.valid[idx] = 1;
        const Eigen::Vector3d col =
            b0 * mesh.color[f[0]] + b1 * mesh.color[f[1]] + b2 * mesh.color[f[2]];
        const size_t ci = idx * 3;
        out.color.rgb[ci] = std::clamp(col.x(), 0.0, 1.0);
        out.color.rgb[ci + 1] = std::clamp(col.y(), 0.0, 1.0);
        out.color.rgb[ci + 2] = std::clamp(col.z(), 0.0, 1.0);
      }
    }
  }
  return out;
}

VertexParamGrads render_backward(const RenderOutput& out, const DepthMesh& mesh,
                                 std::span<const double> cot_color,
                                 std::span<const double> cot_depth,
                                 const ClipPositions& positions) {
  const int nv = mesh.vertex_count();
  if (static_cast<int>(positions.clip.size()) != nv ||
      static_cast<int>(out.clip_target.size()) != nv)
    throw ValidationError("render_backward: saved geometry does not match mesh");
  const size_t npix = static_cast<size_t>(out.width) * out.height;
  if (!cot_color.empty() && cot_color.size() != npix * 3)
    throw ValidationError("render_backward: color cotangent size mismatch");
  if (!cot_depth.empty() && cot_depth.size() != npix)
    throw ValidationError("render_backward: depth cotangent size mismatch");

  std::vector<Eigen::Vector4d> cot_target(nv, Eigen::Vector4d::Zero());
  const int w = out.width, h = out.height;

  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      const size_t idx = static_cast<size_t>(py) * w + px;
      if (!out.coverage[idx]) continue;
      const double gd = cot_depth.empty() ? 0.0 : cot_depth[idx];
      Eigen::Vector3d gc = Eigen::Vector3d::Zero();
      if (!cot_color.empty()) gc = {cot_color[3 * idx], cot_color[3 * idx + 1], cot_color[3 * idx + 2]};
      if (gd == 0.0 && gc.isZero(0.0)) continue;

      const auto& f = mesh.faces[out.tri_index[idx]];
      const Eigen::Vector4d* c[3] = {&out.clip_target[f[0]], &out.clip_target[f[1]],
                                     &out.clip_target[f[2]]};
      double sx[3], sy[3], wc[3];
      for (int k = 0; k < 3; ++k) {
        wc[k] = (*c[k])[3];
        sx[k] = ndc_to_pixel((*c[k])[0] / wc[k], w);
        sy[k] = ndc_to_pixel((*c[k])[1] / wc[k], h);
      }
      const double cx = px + 0.5, cy = py + 0.5;
      const double e[3] = {EdgeFn::eval(sx[1], sy[1], sx[2], sy[2], cx, cy),
                           EdgeFn::eval(sx[2], sy[2], sx[0], sy[0], cx, cy),
                           EdgeFn::eval(sx[0], sy[0], sx[1], sy[1], cx, cy)};
      double beta[3], S = 0.0;
      for (int k = 0; k < 3; ++k) {
        beta[k] = e[k] / wc[k];
        S += beta[k];
      }
      if (S == 0.0) continue;
      double b[3];
      for (int k = 0; k < 3; ++k) b[k] = beta[k] / S;

      // V = gc . color + gd * depth, with color = sum b_k col_k and
      // depth = sum b_k w_k
      double A[3], Vbar = 0.0;
      for (int k = 0; k < 3; ++k) {
        A[k] = gc.dot(mesh.color[f[k]]) + gd * wc[k];
        Vbar += b[k] * A[k];
      }
      double de[3], dw[3], dsx[3] = {0, 0, 0}, dsy[3] = {0, 0, 0};
      for (int k = 0; k < 3; ++k) {
        const double dbeta = (A[k] - Vbar) / S;
        de[k] = dbeta / wc[k];
        dw[k] = gd * b[k] - dbeta * beta[k] / wc[k];
      }
      // e_k is built from the other two vertices: e0:(1,2), e1:(2,0), e2:(0,1)
      static const int ea[3] = {1, 2, 0}, eb[3] = {2, 0, 1};
      for (int k = 0; k < 3; ++k) {
        const int a = ea[k], bb = eb[k];
        dsx[a] += de[k] * (sy[bb] - cy);
        dsy[a] += de[k] * (cx - sx[bb]);
        dsx[bb] += de[k] * (cy - sy[a]);
        dsy[bb] += de[k] * (sx[a] - cx);
      }
      for (int k = 0; k < 3; ++k) {
        const double inv_w = 1.0 / wc[k];
        const double gx = dsx[k] * w * 0.5 * inv_w;
        const double gy = dsy[k] * h * 0.5 * inv_w;
        Eigen::Vector4d& acc = cot_target[f[k]];
        acc[0] += gx;
        acc[1] += gy;
        acc[3] += dw[k] - gx * (*c[k])[0] * inv_w - gy * (*c[k])[1] * inv_w;
      }
    }
  }

  std::vector<Eigen::Vector4d> cot_ref(nv);
  const Eigen::Matrix4d mt = out.target_from_ref.transpose();
  for (int j = 0; j < nv; ++j) cot_ref[j] = mt * cot_target[j];

  VertexParamGrads grads;
  grads.resize(nv);
  apply_vertex_params_backward(positions, cot_ref, grads);
  return grads;
}

}  // namespace meshref
