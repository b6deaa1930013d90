#pragma once

#include "meshref/field.hpp"
#include "meshref/io.hpp"
#include "meshref/losses.hpp"
#include "meshref/meshing.hpp"
#include "meshref/metrics.hpp"
#include "meshref/rasterizer.hpp"

#include <iosfwd>
#include <optional>

namespace meshref {

struct PipelineConfig {
  int downsample = 4;          // mesh grid factor d
  double keep_ratio = 0.5;     // decimation ratio r
  int coarse_iters = 400;
  int local_iters = 700;
  double lr_coarse = 0.001;
  double lr_local = 0.0005;
  int batch = 22;              // auxiliary views per local iteration
  double near_plane = 0.1;
  double far_plane = 100.0;
  FieldConfig field = FieldConfig::mlp_s();
  double edge_tau = 0.03;
  LossWeights weights;
  uint64_t seed = 0;

  void validate() const;
};

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8) followed by a
// projection of the parameters onto [clamp_lo, clamp_hi].
struct AdamState {
  std::vector<double> m, v;
  int64_t t = 0;

  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
};
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, double clamp_lo = -std::numeric_limits<double>::infinity(),
               double clamp_hi = std::numeric_limits<double>::infinity());

// Two-statistic alignment of a relative map to the cloud: median and 0.001
// quantile of the map are matched to the same statistics of the cloud's
// reference-view depths. Falls back to median-ratio scaling when the fitted
// scale is non-positive.
struct GlobalAlignment {
  double scale = 1.0;
  double offset = 0.0;
  bool ratio_fallback = false;
  DepthMap global_depth;  // scale * mono + offset
};
GlobalAlignment global_align(const DepthMap& mono_relative, const SparsePointCloud& cloud,
                             const View& ref);

// Linear-interpolated quantile of an unsorted sample.
double quantile(std::vector<double> values, double q);

enum class RefinementStage { coarse, baked, local, done };

struct RefinementState {
  DepthMesh mesh;
  FieldConfig field_config;
  FieldParams field;
  std::vector<double> vert_znorm;  // field depth input per vertex
  double z_min = 0.0, z_max = 1.0; // global-depth range used for the field input
  ProjectionMatrix proj;
  AdamState adam_field, adam_du, adam_dv, adam_fz;
  RefinementStage stage = RefinementStage::coarse;
  int iteration = 0;
  std::vector<LossBreakdown> history;
};

// Precomputed per-scene inputs shared by the stages.
struct SceneInputs {
  ScalarImage mono_relative;       // mono normalized to [0,1]
  EdgeImage mono_edges;
  DepthMap global_depth;           // aligned absolute mono
  PointResidualData point_residuals;
};

RefinementState make_initial_state(const Scene& scene, const DepthMap& global_depth,
                                   const PipelineConfig& config);
SceneInputs make_scene_inputs(const Scene& scene, const DepthMap& global_depth,
                              const PipelineConfig& config);

// Coarse stage: optimizes the field parameters and the vertex coordinate
// offsets against the reference-view losses; fz stays at 1 and the
// photometric term is off. Aborts with a divergence error when the total
// exceeds 10x its initial value.
void coarse_stage(RefinementState& state, const Scene& scene, const SceneInputs& inputs,
                  const PipelineConfig& config, std::ostream* log);

// Writes the field into the vertex depths, resets the field, decimates, and
// remaps the du/dv optimizer moments onto the surviving vertices (fz moments
// restart at zero).
void bake_and_decimate(RefinementState& state, const PipelineConfig& config);

// Local stage: optimizes du, dv, fz with the photometric term over a seeded
// without-replacement batch of auxiliary views per iteration.
void local_stage(RefinementState& state, const Scene& scene, const SceneInputs& inputs,
                 const PipelineConfig& config, std::ostream* log);

// Renders the reference view of the current mesh (identity field).
RenderOutput render_reference(const RefinementState& state, const Scene& scene);

struct RunResult {
  GlobalAlignment alignment;
  DepthMap global_depth;           // initial absolute estimate
  DepthMap final_depth;
  DepthMesh mesh;
  std::vector<LossBreakdown> history;
  std::optional<MetricsReport> metrics_initial;
  std::optional<MetricsReport> metrics_final;
};
RunResult run(const Scene& scene, const PipelineConfig& config, std::ostream* log = nullptr);

}  // namespace meshref
