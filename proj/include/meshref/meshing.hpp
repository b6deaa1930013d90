#pragma once

#include "meshref/core.hpp"

#include <array>

namespace meshref {

// Triangle mesh over a depth map, stored in reciprocal clip space:
// per-vertex base NDC coordinates (u', v'), reciprocal depth z', bilinearly
// sampled color, and the optimizable offsets du, dv (NDC units) and inverse
// depth scale fz.
struct DepthMesh {
  std::vector<double> u, v, z;        // base position, all in [-1, 1]
  std::vector<double> du, dv, fz;     // |du| <= d/W, |dv| <= d/H, fz in [0.05, 20]
  std::vector<Eigen::Vector3d> color;
  std::vector<uint8_t> boundary;      // grid-border vertices, kept by decimation
  std::vector<std::array<int, 3>> faces;
  int grid_d = 1;                     // downsample factor the mesh was built with
  int image_width = 0;
  int image_height = 0;

  int vertex_count() const { return static_cast<int>(u.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }

  double du_bound() const { return static_cast<double>(grid_d) / image_width; }
  double dv_bound() const { return static_cast<double>(grid_d) / image_height; }

  void validate() const;
};

constexpr double kFzMin = 0.05;
constexpr double kFzMax = 20.0;

// Camera-space point for pixel (u,v) at linear depth z > 0:
// ((u-cx) z / fx, (v-cy) z / fy, -z).
Eigen::Vector3d unproject(double u, double v, double z, const Intrinsics& c);

// Builds the vertex grid (ceil(W/d) x ceil(H/d), samples at i*d + d/2
// clamped to the image) over an absolute depth map. Each cell is split into
// two triangles along the diagonal with the smaller depth difference.
// Vertices whose depth sample has no valid support are dropped together with
// their incident faces.
DepthMesh build_depth_mesh(const DepthMap& depth, const ColorImage& image, const Intrinsics& c,
                           int d, const ProjectionMatrix& proj);

// Quadric edge-collapse decimation in clip space with subset placement:
// surviving vertices keep their exact base coordinates and parameters.
// Boundary vertices are never removed; collapses that would flip or
// degenerate a face in (u', v') are skipped. Stops at ceil(r * N) vertices
// (or earlier if no legal collapse remains).
struct DecimateResult {
  DepthMesh mesh;
  std::vector<int> old_to_new;  // -1 for removed vertices
  double max_collapse_cost = 0.0;
  int collapses = 0;
};
DecimateResult decimate(const DepthMesh& mesh, double keep_ratio);

}  // namespace meshref
