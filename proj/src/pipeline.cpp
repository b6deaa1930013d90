#include "meshref/pipeline.hpp"

#include "meshref/imageops.hpp"
#include "meshref/rng.hpp"

#include <algorithm>
#include <ostream>

namespace meshref {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kDivergenceFactor = 10.0;
constexpr double kDepthMargin = 2e-6;  // keeps baked depths strictly inside the frustum clamp

void log_iteration(std::ostream* log, int iter, const char* stage, const LossBreakdown& b) {
  if (!log) return;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "iter=%d stage=%s total=%.9g geo=%.9g photo=%.9g rs=%.9g rp=%.9g re=%.9g\n", iter,
                stage, b.total, b.geo, b.photo, b.smooth, b.poisson, b.edge);
  (*log) << buf;
}

void check_divergence(const std::vector<LossBreakdown>& history, size_t stage_start,
                      const LossBreakdown& current, const char* stage) {
  if (history.size() <= stage_start) return;  // first iteration of the stage
  const double initial = history[stage_start].total;
  if (current.total > kDivergenceFactor * initial + 1e-9) {
    throw DivergenceError(std::string("divergence in ") + stage + " stage: total " +
                          std::to_string(current.total) + " exceeds 10x initial " +
                          std::to_string(initial));
  }
}

std::vector<double> field_normalized_depths(const DepthMesh& mesh, const ProjectionMatrix& proj,
                                            double z_min, double z_max) {
  const double span = z_max > z_min ? z_max - z_min : 1.0;
  std::vector<double> zn(mesh.vertex_count());
  for (int j = 0; j < mesh.vertex_count(); ++j) {
    zn[j] = (reciprocal_to_depth(mesh.z[j], proj) - z_min) / span;
  }
  return zn;
}

}  // namespace

void PipelineConfig::validate() const {
  if (coarse_iters < 0 || local_iters < 0) throw ValidationError("config: negative iteration count");
  if (!(lr_coarse > 0.0) || !(lr_local > 0.0)) throw ValidationError("config: learning rates must be positive");
  if (batch < 1) throw ValidationError("config: batch must be >= 1");
  if (downsample < 1) throw ValidationError("config: downsample factor must be >= 1");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ValidationError("config: keep ratio in (0,1]");
  if (!(near_plane > 0.0 && near_plane < far_plane)) throw ValidationError("config: require 0 < near < far");
  if (!(edge_tau > 0.0)) throw ValidationError("config: edge tau must be positive");
  if (!(weights.photo >= 0 && weights.geo >= 0 && weights.poisson >= 0 && weights.edge >= 0 &&
        weights.smooth >= 0))
    throw ValidationError("config: loss weights must be non-negative");
  field.validate();
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, double clamp_lo, double clamp_hi) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw ValidationError("adam_step: size mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    if (!std::isfinite(g)) throw ValidationError("adam_step: non-finite gradient");
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g;
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] = std::clamp(params[i] - lr * m_hat / (std::sqrt(v_hat) + kAdamEps), clamp_lo,
                           clamp_hi);
  }
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * (values.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const double frac = pos - lo;
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

GlobalAlignment global_align(const DepthMap& mono_relative, const SparsePointCloud& cloud,
                             const View& ref) {
  std::vector<double> mono_vals;
  mono_vals.reserve(mono_relative.size());
  for (size_t i = 0; i < mono_relative.size(); ++i) {
    if (mono_relative.valid[i]) mono_vals.push_back(mono_relative.values[i]);
  }
  if (mono_vals.size() < 2) throw ValidationError("global_align: mono map has too few valid pixels");
  std::vector<double> cloud_depths;
  for (const auto& p : cloud.points) {
    const double d = -ref.pose.world_to_camera(p).z();
    if (d > 0.0) cloud_depths.push_back(d);
  }
  if (cloud_depths.size() < 2) throw ValidationError("global_align: too few points in front of the camera");

  const double m_d = quantile(mono_vals, 0.5);
  const double q_d = quantile(mono_vals, 0.001);
  const double m_x = quantile(cloud_depths, 0.5);
  const double q_x = quantile(cloud_depths, 0.001);
  if (std::abs(m_d - q_d) < 1e-12) throw ValidationError("global_align: degenerate mono statistics");

  GlobalAlignment a;
  a.scale = (m_x - q_x) / (m_d - q_d);
  a.offset = m_x - a.scale * m_d;
  if (!(a.scale > 0.0)) {
    if (!(m_d > 0.0)) throw ValidationError("global_align: degenerate mono statistics");
    a.scale = m_x / m_d;
    a.offset = 0.0;
    a.ratio_fallback = true;
  }
  a.global_depth = mono_relative;
  for (size_t i = 0; i < a.global_depth.size(); ++i) {
    if (a.global_depth.valid[i])
      a.global_depth.values[i] = a.scale * mono_relative.values[i] + a.offset;
  }
  return a;
}

SceneInputs make_scene_inputs(const Scene& scene, const DepthMap& global_depth,
                              const PipelineConfig& config) {
  SceneInputs in;
  const Normalize01Result norm = normalize01(scene.mono);
  in.mono_relative = norm.image;
  in.mono_edges = sobel_edge_image(in.mono_relative, scene.mono.valid, config.edge_tau);
  in.global_depth = global_depth;
  double z_min = 0.0, z_max = 1.0;
  bool any = false;
  for (size_t i = 0; i < global_depth.size(); ++i) {
    if (!global_depth.valid[i]) continue;
    if (!any) {
      z_min = z_max = global_depth.values[i];
      any = true;
    } else {
      z_min = std::min(z_min, global_depth.values[i]);
      z_max = std::max(z_max, global_depth.values[i]);
    }
  }
  in.point_residuals =
      prepare_point_residuals(global_depth, z_min, z_max, scene.cloud, scene.ref());
  return in;
}

RefinementState make_initial_state(const Scene& scene, const DepthMap& global_depth,
                                   const PipelineConfig& config) {
  config.validate();
  RefinementState st;
  st.proj = projection_from_intrinsics(scene.ref().intrinsics, scene.near_plane, scene.far_plane);

  // clamp the aligned map into the renderable depth range
  DepthMap clamped = global_depth;
  const double lo = scene.near_plane + kFrustumEps + kDepthMargin;
  const double hi = scene.far_plane - kFrustumEps - kDepthMargin;
  for (size_t i = 0; i < clamped.size(); ++i) {
    if (clamped.valid[i]) clamped.values[i] = std::clamp(clamped.values[i], lo, hi);
  }
  st.mesh = build_depth_mesh(clamped, scene.ref().image, scene.ref().intrinsics,
                             config.downsample, st.proj);

  bool any = false;
  st.z_min = 0.0;
  st.z_max = 1.0;
  for (size_t i = 0; i < global_depth.size(); ++i) {
    if (!global_depth.valid[i]) continue;
    if (!any) {
      st.z_min = st.z_max = global_depth.values[i];
      any = true;
    } else {
      st.z_min = std::min(st.z_min, global_depth.values[i]);
      st.z_max = std::max(st.z_max, global_depth.values[i]);
    }
  }
  st.vert_znorm = field_normalized_depths(st.mesh, st.proj, st.z_min, st.z_max);

  st.field_config = config.field;
  st.field = field_init(config.field, config.seed);
  std::vector<double> flat;
  st.field.to_flat(flat);
  st.adam_field.init(flat.size());
  st.adam_du.init(st.mesh.vertex_count());
  st.adam_dv.init(st.mesh.vertex_count());
  st.adam_fz.init(st.mesh.vertex_count());
  return st;
}

namespace {

// Shared per-iteration evaluation of the reference-view losses.
struct ReferencePass {
  RenderOutput render_out;
  ClipPositions clip;
  LGeoResult geo;
  RSmoothResult smooth;
  RPoissonResult poisson;
  REdgeResult edge;
  ScalarImage cot_depth;  // weighted sum over the depth-driven terms
};

ReferencePass reference_pass(const RefinementState& state, const Scene& scene,
                             const SceneInputs& inputs, const PipelineConfig& config,
                             std::span<const double> field_offset,
                             std::span<const double> field_scale) {
  ReferencePass pass;
  pass.clip = apply_vertex_params(state.mesh, field_offset, field_scale, state.proj);
  pass.render_out =
      render(pass.clip, state.mesh, scene.ref(), state.proj, scene.ref(), state.proj);
  pass.geo = l_geo_map(pass.render_out.depth, scene.cloud, scene.ref());
  pass.smooth = r_smooth(pass.render_out.depth, pass.render_out.coverage);
  pass.poisson = r_poisson(pass.render_out.depth, inputs.mono_relative, inputs.mono_edges);
  pass.edge = r_edge(pass.render_out.depth, inputs.mono_edges, state.mesh, config.edge_tau);

  const LossWeights& w = config.weights;
  pass.cot_depth = ScalarImage(pass.render_out.width, pass.render_out.height, 0.0);
  for (size_t i = 0; i < pass.cot_depth.values.size(); ++i) {
    pass.cot_depth.values[i] =
        w.geo * pass.geo.cot_depth.values[i] + w.smooth * pass.smooth.cot_depth.values[i] +
        w.poisson * pass.poisson.cot_depth.values[i] + w.edge * pass.edge.cot_depth.values[i];
  }
  return pass;
}

}  // namespace

void coarse_stage(RefinementState& state, const Scene& scene, const SceneInputs& inputs,
                  const PipelineConfig& config, std::ostream* log) {
  if (state.stage != RefinementStage::coarse)
    throw ValidationError("coarse_stage: state is not in the coarse stage");
  const size_t stage_start = state.history.size();
  const LossWeights& w = config.weights;

  std::vector<double> u_base = state.mesh.u;
  std::vector<double> v_base = state.mesh.v;

  for (int it = 0; it < config.coarse_iters; ++it) {
    const FieldEval vertex_field =
        field_eval(state.field, state.field_config, u_base, v_base, state.vert_znorm);
    const std::span<const double> offs(vertex_field.offset.data(), vertex_field.offset.size());
    const std::span<const double> scals(vertex_field.scale.data(), vertex_field.scale.size());

    ReferencePass pass = reference_pass(state, scene, inputs, config, offs, scals);

    const FieldEval point_field =
        field_eval(state.field, state.field_config, inputs.point_residuals.u_ndc,
                   inputs.point_residuals.v_ndc, inputs.point_residuals.z_norm);
    const CoarseResidualResult point_res = coarse_point_residual(
        inputs.point_residuals,
        std::span<const double>(point_field.offset.data(), point_field.offset.size()),
        std::span<const double>(point_field.scale.data(), point_field.scale.size()));

    const LossBreakdown b =
        total_loss(pass.geo.value + point_res.value, 0.0, pass.smooth.value, pass.poisson.value,
                   pass.edge.value, w, Stage::coarse);
    check_divergence(state.history, stage_start, b, "coarse");

    VertexParamGrads grads = render_backward(pass.render_out, state.mesh, {},
                                             pass.cot_depth.values, pass.clip);
    for (int j = 0; j < state.mesh.vertex_count(); ++j) {
      grads.du[j] += w.edge * pass.edge.cot_du[j];
      grads.dv[j] += w.edge * pass.edge.cot_dv[j];
    }

    // field gradients: through the rendered vertices and through the points
    FieldGrads fg = field_backward(state.field, state.field_config, vertex_field, grads.offset,
                                   grads.scale, u_base, v_base, state.vert_znorm);
    std::vector<double> cot_o(point_res.cot_offset.size());
    std::vector<double> cot_s(point_res.cot_scale.size());
    for (size_t i = 0; i < cot_o.size(); ++i) {
      cot_o[i] = w.geo * point_res.cot_offset[i];
      cot_s[i] = w.geo * point_res.cot_scale[i];
    }
    const FieldGrads fg_points =
        field_backward(state.field, state.field_config, point_field, cot_o, cot_s,
                       inputs.point_residuals.u_ndc, inputs.point_residuals.v_ndc,
                       inputs.point_residuals.z_norm);

    std::vector<double> flat_params, flat_grads, flat_grads_pts;
    state.field.to_flat(flat_params);
    fg.params.to_flat(flat_grads);
    fg_points.params.to_flat(flat_grads_pts);
    for (size_t i = 0; i < flat_grads.size(); ++i) flat_grads[i] += flat_grads_pts[i];
    if (state.field_config.mode != FieldMode::none) {
      adam_step(flat_params, flat_grads, state.adam_field, config.lr_coarse);
      state.field.from_flat(flat_params);
    }
    adam_step(state.mesh.du, grads.du, state.adam_du, config.lr_coarse,
              -state.mesh.du_bound(), state.mesh.du_bound());
    adam_step(state.mesh.dv, grads.dv, state.adam_dv, config.lr_coarse,
              -state.mesh.dv_bound(), state.mesh.dv_bound());

    state.history.push_back(b);
    log_iteration(log, state.iteration, "coarse", b);
    ++state.iteration;
  }
  state.stage = RefinementStage::coarse;  // bake_and_decimate advances the stage
}

void bake_and_decimate(RefinementState& state, const PipelineConfig& config) {
  if (state.stage != RefinementStage::coarse)
    throw ValidationError("bake_and_decimate: state is not in the coarse stage");

  const FieldEval vertex_field =
      field_eval(state.field, state.field_config, state.mesh.u, state.mesh.v, state.vert_znorm);
  const double lo = state.proj.near_plane + kFrustumEps + kDepthMargin;
  const double hi = state.proj.far_plane - kFrustumEps - kDepthMargin;
  for (int j = 0; j < state.mesh.vertex_count(); ++j) {
    const double z_lin = reciprocal_to_depth(state.mesh.z[j], state.proj);
    const double baked =
        std::clamp(z_lin * (1.0 + vertex_field.scale[j]) + vertex_field.offset[j], lo, hi);
    state.mesh.z[j] = depth_to_reciprocal(baked, state.proj);
  }
  state.field_config = FieldConfig::none();
  state.field = FieldParams{};

  DecimateResult dec = decimate(state.mesh, config.keep_ratio);
  const int n_new = dec.mesh.vertex_count();
  AdamState du_new, dv_new;
  du_new.init(n_new);
  dv_new.init(n_new);
  du_new.t = state.adam_du.t;
  dv_new.t = state.adam_dv.t;
  std::vector<double> znorm_new(n_new, 0.0);
  for (size_t old = 0; old < dec.old_to_new.size(); ++old) {
    const int nw = dec.old_to_new[old];
    if (nw < 0) continue;
    du_new.m[nw] = state.adam_du.m[old];
    du_new.v[nw] = state.adam_du.v[old];
    dv_new.m[nw] = state.adam_dv.m[old];
    dv_new.v[nw] = state.adam_dv.v[old];
    znorm_new[nw] = state.vert_znorm[old];
  }
  state.mesh = std::move(dec.mesh);
  state.adam_du = std::move(du_new);
  state.adam_dv = std::move(dv_new);
  state.adam_fz = AdamState{};
  state.adam_fz.init(n_new);
  state.vert_znorm = std::move(znorm_new);
  state.stage = RefinementStage::baked;
}

void local_stage(RefinementState& state, const Scene& scene, const SceneInputs& inputs,
                 const PipelineConfig& config, std::ostream* log) {
  if (state.stage != RefinementStage::baked)
    throw ValidationError("local_stage: state is not baked");
  const size_t stage_start = state.history.size();
  const LossWeights& w = config.weights;

  const std::vector<int> aux = scene.aux_indices();
  const int batch_n = std::min<int>(config.batch, static_cast<int>(aux.size()));
  Rng shuffle_rng(Rng::splitmix(config.seed ^ 0x62617463ull));
  std::vector<int> deck = aux;
  size_t deck_pos = deck.size();  // forces an initial shuffle

  for (int it = 0; it < config.local_iters; ++it) {
    ReferencePass pass = reference_pass(state, scene, inputs, config, {}, {});

    VertexParamGrads grads = render_backward(pass.render_out, state.mesh, {},
                                             pass.cot_depth.values, pass.clip);
    for (int j = 0; j < state.mesh.vertex_count(); ++j) {
      grads.du[j] += w.edge * pass.edge.cot_du[j];
      grads.dv[j] += w.edge * pass.edge.cot_dv[j];
    }

    double photo_total = 0.0;
    if (batch_n > 0 && w.photo > 0.0) {
      std::vector<int> chosen;
      chosen.reserve(batch_n);
      for (int k = 0; k < batch_n; ++k) {
        if (deck_pos >= deck.size()) {
          shuffle_rng.shuffle(deck);
          deck_pos = 0;
        }
        chosen.push_back(deck[deck_pos++]);
      }
      std::sort(chosen.begin(), chosen.end());  // deterministic accumulation order
      const double photo_w = w.photo / batch_n;
      for (int view_idx : chosen) {
        const View& target = scene.views[view_idx];
        const ProjectionMatrix p_target = projection_from_intrinsics(
            target.intrinsics, scene.near_plane, scene.far_plane);
        const RenderOutput aux_out =
            render(pass.clip, state.mesh, target, p_target, scene.ref(), state.proj);
        const LPhotoResult photo = l_photo(aux_out, target.image, config.edge_tau);
        photo_total += photo.value / batch_n;
        std::vector<double> cot_color(photo.cot_color.size());
        std::vector<double> cot_depth(photo.cot_depth.values.size());
        for (size_t i = 0; i < cot_color.size(); ++i) cot_color[i] = photo_w * photo.cot_color[i];
        for (size_t i = 0; i < cot_depth.size(); ++i)
          cot_depth[i] = photo_w * photo.cot_depth.values[i];
        const VertexParamGrads aux_grads =
            render_backward(aux_out, state.mesh, cot_color, cot_depth, pass.clip);
        grads.add_scaled(aux_grads, 1.0);
      }
    }

    const LossBreakdown b = total_loss(pass.geo.value, photo_total, pass.smooth.value,
                                       pass.poisson.value, pass.edge.value, w, Stage::local);
    check_divergence(state.history, stage_start, b, "local");

    adam_step(state.mesh.du, grads.du, state.adam_du, config.lr_local,
              -state.mesh.du_bound(), state.mesh.du_bound());
    adam_step(state.mesh.dv, grads.dv, state.adam_dv, config.lr_local,
              -state.mesh.dv_bound(), state.mesh.dv_bound());
    adam_step(state.mesh.fz, grads.fz, state.adam_fz, config.lr_local, kFzMin, kFzMax);

    state.history.push_back(b);
    log_iteration(log, state.iteration, "local", b);
    ++state.iteration;
  }
  state.stage = RefinementStage::done;
}

RenderOutput render_reference(const RefinementState& state, const Scene& scene) {
  const FieldEval vertex_field =
      field_eval(state.field, state.field_config, state.mesh.u, state.mesh.v, state.vert_znorm);
  const ClipPositions clip = apply_vertex_params(
      state.mesh, std::span<const double>(vertex_field.offset.data(), vertex_field.offset.size()),
      std::span<const double>(vertex_field.scale.data(), vertex_field.scale.size()), state.proj);
  return render(clip, state.mesh, scene.ref(), state.proj, scene.ref(), state.proj);
}

RunResult run(const Scene& scene, const PipelineConfig& config, std::ostream* log) {
  config.validate();
  RunResult result;
  const Normalize01Result mono_norm = normalize01(scene.mono);
  DepthMap mono_rel(scene.mono.width, scene.mono.height);
  mono_rel.values = mono_norm.image.values;
  mono_rel.valid = scene.mono.valid;

  result.alignment = global_align(mono_rel, scene.cloud, scene.ref());
  result.global_depth = result.alignment.global_depth;

  RefinementState state = make_initial_state(scene, result.global_depth, config);
  const SceneInputs inputs = make_scene_inputs(scene, result.global_depth, config);

  if (log) {
    (*log) << "config d=" << config.downsample << " r=" << config.keep_ratio
           << " coarse_iters=" << config.coarse_iters << " local_iters=" << config.local_iters
           << " lr_coarse=" << config.lr_coarse << " lr_local=" << config.lr_local
           << " batch=" << config.batch << " seed=" << config.seed << "\n";
    (*log) << "align scale=" << result.alignment.scale << " offset=" << result.alignment.offset
           << (result.alignment.ratio_fallback ? " (ratio fallback)" : "") << "\n";
  }

  coarse_stage(state, scene, inputs, config, log);
  bake_and_decimate(state, config);
  local_stage(state, scene, inputs, config, log);

  const RenderOutput final_render = render_reference(state, scene);
  result.final_depth = final_render.depth;
  result.mesh = std::move(state.mesh);
  result.history = std::move(state.history);
  if (scene.gt) {
    result.metrics_initial = compute_metrics(result.global_depth, *scene.gt);
    result.metrics_final = compute_metrics(result.final_depth, *scene.gt);
  }
  return result;
}

}  // namespace meshref
