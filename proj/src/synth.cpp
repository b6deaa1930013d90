#include "meshref/synth.hpp"

#include "meshref/imageops.hpp"
#include "meshref/meshing.hpp"
#include "meshref/rasterizer.hpp"
#include "meshref/rng.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace meshref {

namespace fs = std::filesystem;

namespace {

// World frame equals the reference camera frame: x right, y down, the scene
// in front of the camera at negative z.
struct PlanePrim {
  // axis-aligned plane x = c, y = c, or z = c with a bounded rectangle
  int axis;          // 0, 1, 2
  double offset;
  double lo0, hi0, lo1, hi1;  // bounds on the two remaining axes
};

struct BoxPrim {
  Eigen::Vector3d lo, hi;
};

struct Geometry {
  std::vector<PlanePrim> planes;
  std::vector<BoxPrim> boxes;
};

Geometry make_geometry(SceneSpec::Preset preset) {
  Geometry g;
  if (preset == SceneSpec::Preset::plane) {
    g.planes.push_back({2, -3.0, -4.0, 4.0, -3.0, 3.0});  // fronto-parallel at 3 m
    return g;
  }
  // box room: back wall, two side walls, floor, ceiling, and two boxes
  g.planes.push_back({2, -6.0, -3.2, 3.2, -2.6, 2.6});   // back wall
  g.planes.push_back({0, -2.4, -2.6, 2.6, -7.0, 0.0});   // left wall (y, z bounds)
  g.planes.push_back({0, 2.4, -2.6, 2.6, -7.0, 0.0});    // right wall
  g.planes.push_back({1, 1.4, -3.2, 3.2, -7.0, 0.0});    // floor (x, z bounds), y down
  g.planes.push_back({1, -1.6, -3.2, 3.2, -7.0, 0.0});   // ceiling
  g.boxes.push_back({{-1.5, 0.3, -3.4}, {-0.4, 1.4, -2.3}});
  g.boxes.push_back({{0.5, -0.1, -5.0}, {1.8, 1.4, -3.6}});
  return g;
}

// Nearest positive hit along origin + t * dir; returns infinity when the ray
// escapes the geometry.
double raycast(const Geometry& g, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : g.planes) {
    const double denom = dir[p.axis];
    if (std::abs(denom) < 1e-12) continue;
    const double t = (p.offset - origin[p.axis]) / denom;
    if (t <= 1e-9 || t >= best) continue;
    const int a0 = (p.axis + 1) % 3, a1 = (p.axis + 2) % 3;
    const double c0 = origin[a0] + t * dir[a0];
    const double c1 = origin[a1] + t * dir[a1];
    if (c0 < p.lo0 || c0 > p.hi0 || c1 < p.lo1 || c1 > p.hi1) continue;
    best = t;
  }
  for (const auto& b : g.boxes) {
    double t_in = -std::numeric_limits<double>::infinity();
    double t_out = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (int a = 0; a < 3 && ok; ++a) {
      if (std::abs(dir[a]) < 1e-12) {
        if (origin[a] < b.lo[a] || origin[a] > b.hi[a]) ok = false;
        continue;
      }
      double t0 = (b.lo[a] - origin[a]) / dir[a];
      double t1 = (b.hi[a] - origin[a]) / dir[a];
      if (t0 > t1) std::swap(t0, t1);
      t_in = std::max(t_in, t0);
      t_out = std::min(t_out, t1);
    }
    if (!ok || t_in > t_out) continue;
    const double t = t_in > 1e-9 ? t_in : t_out;
    if (t > 1e-9 && t < best) best = t;
  }
  return best;
}

// Smooth seeded lattice noise in [0,1].
struct ValueNoise {
  uint64_t seed;
  double lattice(int64_t x, int64_t y, int64_t z) const {
    uint64_t h = Rng::splitmix(seed ^ (static_cast<uint64_t>(x) * 0x8da6b343ull) ^
                               (static_cast<uint64_t>(y) * 0xd8163841ull) ^
                               (static_cast<uint64_t>(z) * 0xcb1ab31full));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }
  double sample(const Eigen::Vector3d& p, double scale) const {
    const Eigen::Vector3d q = p / scale;
    const int64_t x0 = static_cast<int64_t>(std::floor(q.x()));
    const int64_t y0 = static_cast<int64_t>(std::floor(q.y()));
    const int64_t z0 = static_cast<int64_t>(std::floor(q.z()));
    const double fx = q.x() - x0, fy = q.y() - y0, fz = q.z() - z0;
    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz) {
      for (int dy = 0; dy <= 1; ++dy) {
        for (int dx = 0; dx <= 1; ++dx) {
          const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
          acc += w * lattice(x0 + dx, y0 + dy, z0 + dz);
        }
      }
    }
    return acc;
  }
};

Eigen::Vector3d texture_color(const Eigen::Vector3d& world, uint64_t seed) {
  const ValueNoise n1{Rng::splitmix(seed ^ 0x74657831ull)};
  const ValueNoise n2{Rng::splitmix(seed ^ 0x74657832ull)};
  const double a = n1.sample(world, 0.55);
  const double b = n2.sample(world, 0.17);
  const double checker =
      (static_cast<int64_t>(std::floor(world.x() / 0.35)) +
       static_cast<int64_t>(std::floor(world.y() / 0.35)) +
       static_cast<int64_t>(std::floor(world.z() / 0.35))) % 2 == 0 ? 1.0 : 0.0;
  Eigen::Vector3d c(0.15 + 0.55 * a + 0.2 * checker, 0.2 + 0.5 * b + 0.15 * checker,
                    0.25 + 0.35 * a + 0.3 * b);
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

Pose look_at(const Eigen::Vector3d& center, const Eigen::Vector3d& target) {
  const Eigen::Vector3d back = (center - target).normalized();      // camera +z
  Eigen::Vector3d right = Eigen::Vector3d(0, 1, 0).cross(back);     // down x back
  if (right.norm() < 1e-9) right = Eigen::Vector3d(1, 0, 0);
  right.normalize();
  const Eigen::Vector3d down = back.cross(right);
  Pose p;
  p.rotation.row(0) = right;
  p.rotation.row(1) = down;
  p.rotation.row(2) = back;
  p.translation = -(p.rotation * center);
  return p;
}

void quaternion_of(const Pose& p, double q[4]) {
  const Eigen::Quaterniond quat(p.rotation);
  q[0] = quat.w();
  q[1] = quat.x();
  q[2] = quat.y();
  q[3] = quat.z();
}

}  // namespace

void SceneSpec::validate() const {
  if (views < 2) throw ValidationError("scene spec: need at least 2 views");
  if (width < 8 || height < 8) throw ValidationError("scene spec: image too small");
  if (mono_amplitude < 0.0 || noise_rel < 0.0) throw ValidationError("scene spec: negative amplitude");
  if (!(outlier_frac >= 0.0 && outlier_frac < 1.0))
    throw ValidationError("scene spec: outlier fraction in [0,1)");
  if (points < 1) throw ValidationError("scene spec: need at least one point");
}

DepthMap corrupt_to_mono(const DepthMap& gt, double amplitude, uint64_t seed) {
  if (amplitude < 0.0) throw ValidationError("corrupt_to_mono: negative amplitude");
  Rng rng(Rng::splitmix(seed ^ 0x6d6f6e6full));
  double fu[3], fv[3], phase[3];
  for (int i = 0; i < 3; ++i) {
    fu[i] = rng.uniform(0.5, 2.0);
    fv[i] = rng.uniform(0.5, 2.0);
    phase[i] = rng.uniform(0.0, 2.0 * M_PI);
  }
  DepthMap warped = gt;
  for (int y = 0; y < gt.height; ++y) {
    for (int x = 0; x < gt.width; ++x) {
      if (!gt.is_valid(x, y)) continue;
      const double un = (x + 0.5) / gt.width;
      const double vn = (y + 0.5) / gt.height;
      double s = 0.0;
      for (int i = 0; i < 3; ++i) s += std::sin(2.0 * M_PI * (fu[i] * un + fv[i] * vn) + phase[i]);
      s /= 3.0;
      warped.at(x, y) = gt.at(x, y) * (1.0 + amplitude * s);
    }
  }
  const Normalize01Result norm = normalize01(warped);
  DepthMap mono(gt.width, gt.height);
  mono.valid = gt.valid;
  mono.values = norm.image.values;
  for (size_t i = 0; i < mono.size(); ++i) {
    if (!mono.valid[i]) mono.values[i] = std::numeric_limits<double>::quiet_NaN();
  }
  return mono;
}

SparsePointCloud sample_sparse_points(const DepthMap& gt, const View& ref, int n,
                                      double noise_rel, double outlier_frac, uint64_t seed) {
  if (n < 1) throw ValidationError("sample_sparse_points: need at least one point");
  std::vector<size_t> valid_pixels;
  double z_lo = 0.0, z_hi = 0.0;
  bool any = false;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i]) continue;
    valid_pixels.push_back(i);
    if (!any) {
      z_lo = z_hi = gt.values[i];
      any = true;
    } else {
      z_lo = std::min(z_lo, gt.values[i]);
      z_hi = std::max(z_hi, gt.values[i]);
    }
  }
  if (!any) throw ValidationError("sample_sparse_points: ground truth has no valid pixels");

  Rng rng(Rng::splitmix(seed ^ 0x70747321ull));
  struct Sample {
    int x, y;
    double depth;
  };
  std::vector<Sample> samples;
  samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    const size_t pix = valid_pixels[rng.index(valid_pixels.size())];
    const int x = static_cast<int>(pix % gt.width);
    const int y = static_cast<int>(pix / gt.width);
    double depth = gt.values[pix] * (1.0 + rng.normal(0.0, noise_rel));
    depth = std::max(depth, 0.05 * z_lo);
    samples.push_back({x, y, depth});
  }
  const int n_outliers = static_cast<int>(std::floor(outlier_frac * n));
  if (n_outliers > 0) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (int i = 0; i < n_outliers; ++i) {
      samples[order[i]].depth = rng.uniform(z_lo, z_hi);
    }
  }

  SparsePointCloud cloud;
  cloud.points.reserve(n);
  for (const Sample& s : samples) {
    const Eigen::Vector3d cam = unproject(s.x + 0.5, s.y + 0.5, s.depth, ref.intrinsics);
    cloud.points.push_back(ref.pose.camera_to_world(cam));
  }
  return cloud;
}

std::string generate_scene(const SceneSpec& spec, const std::string& dir) {
  spec.validate();
  fs::create_directories(dir);
  const fs::path base(dir);

  const Geometry geometry = make_geometry(spec.preset);
  Intrinsics intr;
  intr.width = spec.width;
  intr.height = spec.height;
  intr.fx = intr.fy = 0.9 * spec.width;
  intr.cx = spec.width / 2.0;
  intr.cy = spec.height / 2.0;

  // reference view at the world origin
  std::vector<Pose> poses;
  poses.push_back(Pose{});
  Rng traj_rng(Rng::splitmix(spec.seed ^ 0x74726a31ull));
  const Eigen::Vector3d target(0.0, 0.0, spec.preset == SceneSpec::Preset::plane ? -3.0 : -3.5);
  for (int i = 1; i < spec.views; ++i) {
    const double phase = (2.0 * i / (spec.views - 1.0) - 1.0);  // [-1, 1]
    Eigen::Vector3d center(spec.arc_radius * std::sin(phase * 1.0),
                           0.4 * spec.arc_radius * std::sin(phase * 2.1),
                           0.15 * spec.arc_radius * (1.0 - std::cos(phase * 1.0)));
    center += spec.jitter * Eigen::Vector3d(traj_rng.uniform(-1.0, 1.0),
                                            traj_rng.uniform(-1.0, 1.0),
                                            traj_rng.uniform(-1.0, 1.0));
    poses.push_back(look_at(center, target));
  }

  // analytic reference depth and texture
  DepthMap gt_analytic(spec.width, spec.height);
  ColorImage ref_color(spec.width, spec.height);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Eigen::Vector3d dir((x + 0.5 - intr.cx) / intr.fx, (y + 0.5 - intr.cy) / intr.fy,
                                -1.0);
      const double t = raycast(geometry, Eigen::Vector3d::Zero(), dir);
      if (!std::isfinite(t)) continue;
      gt_analytic.set(x, y, t);  // dir.z = -1, so the ray parameter is the depth
      ref_color.set_pixel(x, y, texture_color(t * dir, spec.seed));
    }
  }

  // dense reference mesh renders every view, including the stored gt
  const ProjectionMatrix proj = projection_from_intrinsics(intr, spec.near_plane, spec.far_plane);
  const DepthMesh gt_mesh = build_depth_mesh(gt_analytic, ref_color, intr, 1, proj);
  View ref_view;
  ref_view.id = 0;
  ref_view.intrinsics = intr;
  ref_view.pose = poses[0];
  const ClipPositions clip = apply_vertex_params(gt_mesh, {}, {}, proj);

  std::vector<std::string> image_names;
  DepthMap gt_rendered;
  for (int i = 0; i < spec.views; ++i) {
    View target_view;
    target_view.id = i;
    target_view.intrinsics = intr;
    target_view.pose = poses[i];
    const RenderOutput out = render(clip, gt_mesh, target_view, proj, ref_view, proj);
    char name[64];
    std::snprintf(name, sizeof(name), "view_%03d.ppm", i);
    write_ppm((base / name).string(), out.color);
    image_names.push_back(name);
    if (i == 0) gt_rendered = out.depth;
  }

  write_pfm((base / "gt.pfm").string(), gt_rendered);
  const DepthMap mono = corrupt_to_mono(gt_rendered, spec.mono_amplitude, spec.seed);
  write_pfm((base / "mono.pfm").string(), mono);
  View ref_for_points = ref_view;
  const SparsePointCloud cloud = sample_sparse_points(gt_rendered, ref_for_points, spec.points,
                                                      spec.noise_rel, spec.outlier_frac, spec.seed);
  write_points((base / "points.txt").string(), cloud);

  const std::string manifest_path = (base / "manifest.txt").string();
  std::ofstream mf(manifest_path);
  if (!mf) throw ValidationError("generate_scene: cannot write manifest");
  mf << "version 1\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "near %.17g\nfar %.17g\nref_view 0\n", spec.near_plane,
                spec.far_plane);
  mf << buf;
  for (int i = 0; i < spec.views; ++i) {
    double q[4];
    quaternion_of(poses[i], q);
    const Eigen::Vector3d& t = poses[i].translation;
    std::snprintf(buf, sizeof(buf),
                  "view %d %s %d %d %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g "
                  "%.17g\n",
                  i, image_names[i].c_str(), spec.width, spec.height, intr.fx, intr.fy, intr.cx,
                  intr.cy, q[0], q[1], q[2], q[3], t.x(), t.y(), t.z());
    mf << buf;
  }
  mf << "points points.txt\nmono mono.pfm\ngt gt.pfm\n";
  mf.close();
  return manifest_path;
}

}  // namespace meshref
