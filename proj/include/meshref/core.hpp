#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace meshref {

// Thrown for invalid data, malformed files, or broken preconditions.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when an optimization run exceeds its divergence guard.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Pinhole intrinsics in pixel units. Continuous pixel coordinates put the
// image origin at the top-left corner; pixel (i,j) is centered at
// (i+0.5, j+0.5).
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;
};

// World-to-camera rigid transform. Camera frame: x right, y down, the view
// direction along -z, so a point m meters in front of the camera has
// camera-space z = -m and depth m.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  void validate() const;

  Eigen::Matrix4d matrix() const;

  // Normalizes the quaternion before conversion.
  static Pose from_quaternion(double qw, double qx, double qy, double qz,
                              const Eigen::Vector3d& t);

  Eigen::Vector3d world_to_camera(const Eigen::Vector3d& x) const;
  Eigen::Vector3d camera_to_world(const Eigen::Vector3d& q) const;
  Eigen::Vector3d camera_center() const;
};

// 4x4 clip-space projection with its depth range.
struct ProjectionMatrix {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  double near_plane = 0.0;
  double far_plane = 0.0;
};

// Dense scalar raster; no validity semantics.
struct ScalarImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  ScalarImage() = default;
  ScalarImage(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<size_t>(w) * h, fill) {}

  double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return values.size(); }
};

// Values in [-1,1]; below zero marks a discontinuity, above zero a surface.
using EdgeImage = ScalarImage;

// Per-pixel linear depth in meters with a validity mask. Invalid pixels may
// hold any payload (NaN after file round trips).
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  std::vector<uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w),
        height(h),
        values(static_cast<size_t>(w) * h, 0.0),
        valid(static_cast<size_t>(w) * h, 0) {}

  double& at(int x, int y) { return values[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<size_t>(y) * width + x]; }
  bool is_valid(int x, int y) const { return valid[static_cast<size_t>(y) * width + x] != 0; }
  void set(int x, int y, double z) {
    size_t i = static_cast<size_t>(y) * width + x;
    values[i] = z;
    valid[i] = 1;
  }
  void set_invalid(int x, int y) {
    size_t i = static_cast<size_t>(y) * width + x;
    valid[i] = 0;
  }
  size_t size() const { return values.size(); }
  size_t count_valid() const;

  // Metric maps require every valid depth finite and > 0; relative maps
  // (require_positive = false) only finite and >= 0.
  void validate(bool require_positive = true) const;
};

// W x H RGB raster, channel values in [0,1], row-major, 3 doubles per pixel.
struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  ColorImage() = default;
  ColorImage(int w, int h)
      : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0.0) {}

  Eigen::Vector3d pixel(int x, int y) const {
    size_t i = (static_cast<size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }
  void set_pixel(int x, int y, const Eigen::Vector3d& c) {
    size_t i = (static_cast<size_t>(y) * width + x) * 3;
    rgb[i] = c.x();
    rgb[i + 1] = c.y();
    rgb[i + 2] = c.z();
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }

  void validate() const;  // all values finite, within [0,1]
};

// One posed input image.
struct View {
  int id = 0;
  Intrinsics intrinsics;
  Pose pose;
  ColorImage image;
};

// World-space triangulated points visible in the reference view.
struct SparsePointCloud {
  std::vector<Eigen::Vector3d> points;

  size_t size() const { return points.size(); }
  void validate() const;  // N >= 1, finite coordinates
};

// Builds the clip projection for the given intrinsics and depth range.
// Normalized device depth runs from -1 at `near` to +1 at `far`.
ProjectionMatrix projection_from_intrinsics(const Intrinsics& c, double near,
                                            double far);

// Linear depth (meters, in [near, far]) -> normalized device depth in [-1,1].
double depth_to_reciprocal(double z, const ProjectionMatrix& p);
// Exact inverse of depth_to_reciprocal.
double reciprocal_to_depth(double z_ndc, const ProjectionMatrix& p);

// Continuous pixel coordinate <-> NDC on one axis: u' = 2u/size - 1.
double pixel_to_ndc(double u, int size);
double ndc_to_pixel(double u_ndc, int size);

// (R_i|t_i) * (R_0|t_0)^-1 as a rigid 4x4; maps reference-camera space to
// view-i camera space.
Eigen::Matrix4d relative_transform(const Pose& view_i, const Pose& view_0);

// Projects a camera-space point to continuous pixel coordinates. Returns
// depth = -q.z; callers must check depth > 0 before using (u,v).
struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};
PixelProjection project_to_pixel(const Eigen::Vector3d& q, const Intrinsics& c);

}  // namespace meshref
