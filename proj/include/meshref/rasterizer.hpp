#pragma once

#include "meshref/core.hpp"
#include "meshref/meshing.hpp"

#include <span>

namespace meshref {

// Differentiable projection and rasterization.
//
// Mesh vertices live in reference-view reciprocal clip space. The per-vertex
// parameter map is, for base position (u', v', z'):
//   1. shift to n = (u'+du, v'+dv, z') and unproject to the camera ray,
//      giving linear depth z_lin;
//   2. rescale along the ray so the depth becomes (z_lin (1+s) + o) / fz;
//   3. clamp the depth into [near+eps, far-eps] (inactive inside the range);
//   4. reproject, yielding clip position p' = (h n_x, h n_y, P23 - h P22, h)
//      with h the clamped depth.
// The map is differentiable in du, dv, fz, o, s; the clamp contributes zero
// depth gradient on its active branch.

constexpr double kFrustumEps = 1e-6;

struct ClipPositions {
  struct Tape {
    double nx = 0, ny = 0;      // shifted NDC position
    double z_lin = 0;           // base linear depth
    double z_new = 0;           // remapped depth before the frustum clamp
    double h = 0;               // clamped depth (= clip w)
    double fz = 1, s = 0;
    bool in_range = false;      // frustum clamp inactive
  };
  std::vector<Eigen::Vector4d> clip;
  std::vector<Tape> tape;
  ProjectionMatrix proj;
};

// field_offset/field_scale may be empty (treated as zeros). Throws when a
// vertex maps to a non-finite position.
ClipPositions apply_vertex_params(const DepthMesh& mesh, std::span<const double> field_offset,
                                  std::span<const double> field_scale,
                                  const ProjectionMatrix& p0);

// Backward through the parameter map alone: dL/dp' per vertex to parameter
// gradients. Exposed for chaining; render_backward already includes it.
struct VertexParamGrads {
  std::vector<double> du, dv, fz;
  std::vector<double> offset, scale;  // field outputs (o, s) per vertex

  void resize(int n) {
    du.assign(n, 0.0);
    dv.assign(n, 0.0);
    fz.assign(n, 0.0);
    offset.assign(n, 0.0);
    scale.assign(n, 0.0);
  }
  void add_scaled(const VertexParamGrads& other, double w);
};
void apply_vertex_params_backward(const ClipPositions& tape,
                                  const std::vector<Eigen::Vector4d>& cot_clip,
                                  VertexParamGrads& grads);

// Rasterized view of the mesh plus everything the backward pass needs.
struct RenderOutput {
  ColorImage color;
  DepthMap depth;                      // linear meters, invalid where uncovered
  std::vector<uint8_t> coverage;
  std::vector<int32_t> tri_index;      // -1 where uncovered
  std::vector<std::array<double, 3>> bary;
  int width = 0;
  int height = 0;

  // saved geometry
  Eigen::Matrix4d target_from_ref = Eigen::Matrix4d::Identity();
  std::vector<Eigen::Vector4d> clip_target;

  bool covered(int x, int y) const { return coverage[static_cast<size_t>(y) * width + x] != 0; }
};

// Transforms reference clip positions to the target view and rasterizes with
// pixel centers at (x+0.5, y+0.5). Depth test keeps the nearest surface;
// ties go to the lower triangle index. Color and depth are perspective
// correct; back-facing triangles are rasterized.
RenderOutput render(const ClipPositions& positions, const DepthMesh& mesh, const View& target,
                    const ProjectionMatrix& p_target, const View& ref,
                    const ProjectionMatrix& p_ref);

// Accumulates exact partials of sum(cot_color * color + cot_depth * depth)
// over covered pixels with respect to the vertex parameters. Coverage
// changes are non-differentiable and carry no gradient. cot_color may be
// empty (all zero); cot_depth likewise.
VertexParamGrads render_backward(const RenderOutput& out, const DepthMesh& mesh,
                                 std::span<const double> cot_color,
                                 std::span<const double> cot_depth,
                                 const ClipPositions& positions);

}  // namespace meshref
