#pragma once

#include "meshref/core.hpp"
#include "meshref/io.hpp"

#include <string>

namespace meshref {

// Deterministic synthetic scenes with exact ground truth. Geometry is
// analytic (a textured fronto-parallel plane, or a room of axis-aligned
// planes and boxes); every view's color image and the reference ground-truth
// depth are rendered from a dense depth mesh of the reference view, so the
// captured images are exactly representable by the optimized geometry.
struct SceneSpec {
  enum class Preset { plane, box_room };
  Preset preset = Preset::box_room;
  int width = 160;
  int height = 120;
  int views = 12;                 // including the reference
  double arc_radius = 0.25;       // meters of lateral camera motion
  double jitter = 0.02;           // meters of per-view position jitter
  double mono_amplitude = 0.1;    // relative low-frequency corruption
  int points = 5000;
  double noise_rel = 0.02;
  double outlier_frac = 0.02;
  double near_plane = 0.1;
  double far_plane = 100.0;
  uint64_t seed = 0;

  void validate() const;
};

// Writes manifest.txt, view_###.ppm, gt.pfm, mono.pfm and points.txt into
// `dir` (created if missing) and returns the manifest path. Bitwise
// reproducible for a fixed spec.
std::string generate_scene(const SceneSpec& spec, const std::string& dir);

// Relative pseudo-mono map: normalize01(gt * (1 + amplitude * S)) with S a
// seeded smooth field of at most three sinusoids, |S| <= 1. Discontinuities
// of gt are preserved exactly.
DepthMap corrupt_to_mono(const DepthMap& gt, double amplitude, uint64_t seed);

// N pixels drawn uniformly over valid gt, unprojected at depth
// gt * (1 + Normal(0, noise_rel)); floor(outlier_frac * N) of them are
// replaced by uniformly random depths within [min gt, max gt] along the same
// rays. Returned in world space.
SparsePointCloud sample_sparse_points(const DepthMap& gt, const View& ref, int n,
                                      double noise_rel, double outlier_frac, uint64_t seed);

}  // namespace meshref
