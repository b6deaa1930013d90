#pragma once

#include "meshref/core.hpp"
#include "meshref/field.hpp"
#include "meshref/rasterizer.hpp"

namespace meshref {

// Objective terms with hand-written cotangents. Every term is returned
// unweighted; weighting and summation happen in total_loss. The ||.||_2
// reduction is the root of the mean over contributing pixels, with a
// pixel's channels summed inside the square, so values are comparable
// across image sizes.

struct LossWeights {
  double photo = 1.0;
  double geo = 0.1;
  double poisson = 400.0;
  double edge = 0.1;
  double smooth = 0.001;
};

struct LossBreakdown {
  double geo = 0.0;
  double photo = 0.0;
  double smooth = 0.0;
  double poisson = 0.0;
  double edge = 0.0;
  double total = 0.0;
};

enum class Stage { coarse, local };

// Weighted sum; the photometric term participates only in the local stage.
// Throws on a non-finite term, naming it.
LossBreakdown total_loss(double geo, double photo, double smooth, double poisson, double edge,
                         const LossWeights& w, Stage stage);

// ||D - blur5(D)|| over covered pixels.
struct RSmoothResult {
  double value = 0.0;
  ScalarImage cot_depth;
};
RSmoothResult r_smooth(const DepthMap& rendered, const std::vector<uint8_t>& mask);

// Edge alignment: term1 = ||max(0,E*) - max(0,E^r)|| over the full frame with
// E* the edge image of the rendered depth (normalized then Sobel); term2 =
// mean over vertices of E^r sampled at the vertices' current pixel
// coordinates. Backward yields a depth cotangent (term1) and direct du/dv
// gradients (term2, NDC units).
struct REdgeResult {
  double value = 0.0;
  double term_align = 0.0;
  double term_pull = 0.0;
  ScalarImage cot_depth;
  std::vector<double> cot_du, cot_dv;
};
REdgeResult r_edge(const DepthMap& rendered, const EdgeImage& mono_edges, const DepthMesh& mesh,
                   double tau);

// Gradient-domain match of the normalized rendered depth against the mono
// map, masked by max(0, E^r); the u and v terms are reduced separately and
// summed. Pixels whose forward-difference partner is uncovered contribute 0.
struct RPoissonResult {
  double value = 0.0;
  ScalarImage cot_depth;
};
RPoissonResult r_poisson(const DepthMap& rendered, const ScalarImage& mono,
                         const EdgeImage& mono_edges);

// Normalized Huber distance between a depth image and the sparse cloud:
// (1/|X|) sum H_delta(z_D - z_X) / z_X with delta = 0.5, over points that
// project in front of the camera into the frame. Points landing on
// uncovered pixels contribute 0 and are reported in miss_fraction.
struct LGeoResult {
  double value = 0.0;
  double miss_fraction = 0.0;
  ScalarImage cot_depth;
};
LGeoResult l_geo_map(const DepthMap& rendered, const SparsePointCloud& cloud, const View& ref);

constexpr double kHuberDelta = 0.5;
double huber(double a);
double huber_grad(double a);

// Per-point data for the coarse point residual, fixed over an optimization.
struct PointResidualData {
  std::vector<double> u_ndc, v_ndc, z_norm;  // field inputs at the point pixels
  std::vector<double> z_global;              // sampled global depth
  std::vector<double> z_point;               // point depth in the reference view
  size_t count() const { return z_point.size(); }
};
PointResidualData prepare_point_residuals(const DepthMap& mono_global, double z_min, double z_max,
                                          const SparsePointCloud& cloud, const View& ref);

// Residual of z_g (1+s) + o against the point depths; cotangents are per
// point on the field outputs.
struct CoarseResidualResult {
  double value = 0.0;
  std::vector<double> cot_offset, cot_scale;
};
CoarseResidualResult coarse_point_residual(const PointResidualData& data,
                                           std::span<const double> offset,
                                           std::span<const double> scale);

// Convenience composition of prepare + field_eval + residual + field
// backward, returning parameter gradients directly.
struct CoarseResidualFull {
  double value = 0.0;
  FieldParams param_grads;
};
CoarseResidualFull coarse_point_residual_full(const DepthMap& mono_global, double z_min,
                                              double z_max, const FieldParams& params,
                                              const FieldConfig& config,
                                              const SparsePointCloud& cloud, const View& ref);

// Masked photometric error between a rendered and a captured image. The
// occlusion mask is max(0, edge image of the rendered depth) times coverage.
struct LPhotoResult {
  double value = 0.0;
  std::vector<double> cot_color;  // 3 per pixel
  ScalarImage cot_depth;          // through the mask
};
LPhotoResult l_photo(const RenderOutput& rendered, const ColorImage& captured, double tau);

}  // namespace meshref
