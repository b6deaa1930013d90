#include "meshref/imageops.hpp"
#include "meshref/io.hpp"
#include "meshref/metrics.hpp"
#include "meshref/pipeline.hpp"
#include "meshref/synth.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace meshref;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

FieldConfig field_from_name(const std::string& name) {
  if (name == "mlp-s") return FieldConfig::mlp_s();
  if (name == "mlp-m") return FieldConfig::mlp_m();
  if (name == "mlp-xl") return FieldConfig::mlp_xl();
  if (name == "affine") return FieldConfig::global_affine();
  if (name == "none") return FieldConfig::none();
  throw CLI::ValidationError("--field", "unknown field preset: " + name);
}

void print_config(const PipelineConfig& c, const std::string& field_name) {
  std::cout << "config: d=" << c.downsample << " r=" << c.keep_ratio
            << " coarse-iters=" << c.coarse_iters << " local-iters=" << c.local_iters
            << " lr-coarse=" << c.lr_coarse << " lr-local=" << c.lr_local << " batch=" << c.batch
            << " field=" << field_name << " tau-e=" << c.edge_tau << " seed=" << c.seed
            << std::endl;
}

int run_refine(const std::string& scene_path, const std::string& out_depth,
               const std::string& out_mesh, const PipelineConfig& config,
               const std::string& field_name, const std::string& log_path) {
  print_config(config, field_name);
  const Scene scene = load_scene(scene_path);
  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw ValidationError("cannot open log file " + log_path);
    log = &log_file;
  }
  const RunResult result = run(scene, config, log);
  write_pfm(out_depth, result.final_depth);
  std::cout << "wrote depth: " << out_depth << std::endl;
  if (!out_mesh.empty()) {
    const ProjectionMatrix proj =
        projection_from_intrinsics(scene.ref().intrinsics, scene.near_plane, scene.far_plane);
    export_obj(result.mesh, scene.ref(), proj, out_mesh);
    std::cout << "wrote mesh: " << out_mesh << std::endl;
  }
  if (result.metrics_final) {
    std::cout << "metrics (initial): " << result.metrics_initial->to_single_line() << std::endl;
    std::cout << "metrics (final):   " << result.metrics_final->to_single_line() << std::endl;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mesh-based multi-view depth map refinement"};
  app.require_subcommand(1);

  // refine
  auto* refine = app.add_subcommand("refine", "Refine a scene's mono depth map");
  std::string scene_path, out_depth, out_mesh, log_path;
  std::string field_name = "mlp-s";
  PipelineConfig config;
  refine->add_option("--scene", scene_path, "Scene manifest")->required();
  refine->add_option("--out-depth", out_depth, "Output PFM depth map")->required();
  refine->add_option("--out-mesh", out_mesh, "Optional output OBJ mesh");
  refine->add_option("--d", config.downsample, "Mesh downsample factor")->capture_default_str();
  refine->add_option("--r", config.keep_ratio, "Decimation keep ratio")->capture_default_str();
  refine->add_option("--coarse-iters", config.coarse_iters, "Coarse iterations")
      ->capture_default_str();
  refine->add_option("--local-iters", config.local_iters, "Local iterations")
      ->capture_default_str();
  refine->add_option("--lr-coarse", config.lr_coarse, "Coarse learning rate")
      ->capture_default_str();
  refine->add_option("--lr-local", config.lr_local, "Local learning rate")->capture_default_str();
  refine->add_option("--batch", config.batch, "Auxiliary views per local iteration")
      ->capture_default_str();
  refine->add_option("--field", field_name, "Coarse field: mlp-s|mlp-m|mlp-xl|affine|none")
      ->capture_default_str();
  refine->add_option("--seed", config.seed, "Random seed")->capture_default_str();
  refine->add_option("--log", log_path, "Write the per-iteration log to this file");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a depth map against ground truth");
  std::string pred_path, gt_path;
  double max_depth = 7.0;
  eval->add_option("--pred", pred_path, "Predicted PFM depth map")->required();
  eval->add_option("--gt", gt_path, "Ground-truth PFM depth map")->required();
  eval->add_option("--max-depth", max_depth, "Evaluation depth cutoff (m)")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene");
  std::string preset = "box-room", out_dir;
  SceneSpec spec;
  synth->add_option("--preset", preset, "plane|box-room")->capture_default_str();
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--views", spec.views, "View count (including reference)")
      ->capture_default_str();
  synth->add_option("--points", spec.points, "Sparse point count")->capture_default_str();
  synth->add_option("--noise", spec.noise_rel, "Relative point noise")->capture_default_str();
  synth->add_option("--outliers", spec.outlier_frac, "Outlier fraction")->capture_default_str();
  synth->add_option("--mono-amplitude", spec.mono_amplitude, "Mono corruption amplitude")
      ->capture_default_str();
  synth->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  synth->add_option("--width", spec.width, "Image width")->capture_default_str();
  synth->add_option("--height", spec.height, "Image height")->capture_default_str();

  // render
  auto* render_cmd = app.add_subcommand("render", "Render the aligned depth mesh into a view");
  std::string render_scene, out_image, render_out_depth;
  int view_id = 0;
  render_cmd->add_option("--scene", render_scene, "Scene manifest")->required();
  render_cmd->add_option("--view", view_id, "View id to render")->required();
  render_cmd->add_option("--out-image", out_image, "Output PPM image")->required();
  render_cmd->add_option("--out-depth", render_out_depth, "Optional output PFM depth");
  int render_d = 1;
  render_cmd->add_option("--d", render_d, "Mesh downsample factor")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (refine->parsed()) {
      config.field = field_from_name(field_name);
      return run_refine(scene_path, out_depth, out_mesh, config, field_name, log_path);
    }
    if (eval->parsed()) {
      const DepthMap pred = read_pfm(pred_path);
      const DepthMap gt = read_pfm(gt_path);
      const MetricsReport report = compute_metrics(pred, gt, max_depth);
      std::cout << report.to_lines() << std::endl;
      return kExitOk;
    }
    if (synth->parsed()) {
      if (preset == "plane") {
        spec.preset = SceneSpec::Preset::plane;
      } else if (preset == "box-room") {
        spec.preset = SceneSpec::Preset::box_room;
      } else {
        std::cerr << "error: unknown preset: " << preset << std::endl;
        return kExitUsage;
      }
      const std::string manifest = generate_scene(spec, out_dir);
      std::cout << "wrote scene: " << manifest << std::endl;
      return kExitOk;
    }
    if (render_cmd->parsed()) {
      const Scene scene = load_scene(render_scene);
      const Normalize01Result mono_norm = normalize01(scene.mono);
      DepthMap mono_rel(scene.mono.width, scene.mono.height);
      mono_rel.values = mono_norm.image.values;
      mono_rel.valid = scene.mono.valid;
      const GlobalAlignment align = global_align(mono_rel, scene.cloud, scene.ref());
      PipelineConfig rc;
      rc.downsample = render_d;
      RefinementState st = make_initial_state(scene, align.global_depth, rc);
      const View* target = nullptr;
      for (const auto& v : scene.views) {
        if (v.id == view_id) target = &v;
      }
      if (!target) throw ValidationError("render: no view with id " + std::to_string(view_id));
      const ProjectionMatrix p_target =
          projection_from_intrinsics(target->intrinsics, scene.near_plane, scene.far_plane);
      const ClipPositions clip = apply_vertex_params(st.mesh, {}, {}, st.proj);
      const RenderOutput out = render(clip, st.mesh, *target, p_target, scene.ref(), st.proj);
      write_ppm(out_image, out.color);
      std::cout << "wrote image: " << out_image << std::endl;
      if (!render_out_depth.empty()) {
        write_pfm(render_out_depth, out.depth);
        std::cout << "wrote depth: " << render_out_depth << std::endl;
      }
      return kExitOk;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitData;
  }
  return kExitUsage;
}
