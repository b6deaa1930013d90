#include "meshref/core.hpp"

namespace meshref {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("intrinsics: focal lengths must be positive");
  if (width < 2 || height < 2) throw ValidationError("intrinsics: image must be at least 2x2");
  if (!(cx >= 0.0 && cx <= width) || !(cy >= 0.0 && cy <= height))
    throw ValidationError("intrinsics: principal point outside image");
  if (!std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(cx) || !std::isfinite(cy))
    throw ValidationError("intrinsics: non-finite entry");
}

void Pose::validate() const {
  const Eigen::Matrix3d gram = rotation.transpose() * rotation;
  const double ortho = (gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho < 1e-9)) throw ValidationError("pose: rotation not orthonormal");
  const double det = rotation.determinant();
  if (!(det >= 1.0 - 1e-9 && det <= 1.0 + 1e-9))
    throw ValidationError("pose: rotation determinant must be +1");
  if (!translation.allFinite()) throw ValidationError("pose: non-finite translation");
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose Pose::from_quaternion(double qw, double qx, double qy, double qz,
                           const Eigen::Vector3d& t) {
  const double n = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
  if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("pose: zero or non-finite quaternion");
  Eigen::Quaterniond q(qw / n, qx / n, qy / n, qz / n);
  Pose p;
  p.rotation = q.toRotationMatrix();
  p.translation = t;
  return p;
}

Eigen::Vector3d Pose::world_to_camera(const Eigen::Vector3d& x) const {
  return rotation * x + translation;
}

Eigen::Vector3d Pose::camera_to_world(const Eigen::Vector3d& q) const {
  return rotation.transpose() * (q - translation);
}

Eigen::Vector3d Pose::camera_center() const {
  return -(rotation.transpose() * translation);
}

size_t DepthMap::count_valid() const {
  size_t n = 0;
  for (uint8_t f : valid) n += (f != 0);
  return n;
}

void DepthMap::validate(bool require_positive) const {
  if (values.size() != static_cast<size_t>(width) * height || valid.size() != values.size())
    throw ValidationError("depth map: storage does not match dimensions");
  for (size_t i = 0; i < values.size(); ++i) {
    if (!valid[i]) continue;
    const double v = values[i];
    if (!std::isfinite(v) || (require_positive ? !(v > 0.0) : v < 0.0))
      throw ValidationError("depth map: valid pixel with non-finite or non-positive depth");
  }
}

void ColorImage::validate() const {
  if (rgb.size() != static_cast<size_t>(width) * height * 3)
    throw ValidationError("color image: storage does not match dimensions");
  for (double v : rgb) {
    if (!(std::isfinite(v) && v >= 0.0 && v <= 1.0))
      throw ValidationError("color image: value outside [0,1]");
  }
}

void SparsePointCloud::validate() const {
  if (points.empty()) throw ValidationError("point cloud: empty");
  for (const auto& p : points) {
    if (!p.allFinite()) throw ValidationError("point cloud: non-finite point");
  }
}

ProjectionMatrix projection_from_intrinsics(const Intrinsics& c, double near,
                                            double far) {
  if (!(near > 0.0)) throw ValidationError("projection: near plane must be positive");
  if (!(far > near)) throw ValidationError("projection: far plane must exceed near plane");
  c.validate();
  ProjectionMatrix p;
  p.near_plane = near;
  p.far_plane = far;
  const double w = c.width;
  const double h = c.height;
  p.m(0, 0) = 2.0 * c.fx / w;
  p.m(0, 2) = 1.0 - 2.0 * c.cx / w;
  p.m(1, 1) = -2.0 * c.fy / h;
  p.m(1, 2) = 1.0 - 2.0 * c.cy / h;
  p.m(2, 2) = -(far + near) / (far - near);
  p.m(2, 3) = -2.0 * far * near / (far - near);
  p.m(3, 2) = -1.0;
  return p;
}

double depth_to_reciprocal(double z, const ProjectionMatrix& p) {
  if (!(z >= p.near_plane && z <= p.far_plane))
    throw ValidationError("depth_to_reciprocal: depth outside [near, far]");
  const double n = p.near_plane, f = p.far_plane;
  return (f + n) / (f - n) - 2.0 * f * n / ((f - n) * z);
}

double reciprocal_to_depth(double z_ndc, const ProjectionMatrix& p) {
  if (!(z_ndc >= -1.0 && z_ndc <= 1.0))
    throw ValidationError("reciprocal_to_depth: normalized depth outside [-1, 1]");
  const double n = p.near_plane, f = p.far_plane;
  const double a = (f + n) / (f - n);
  const double b = 2.0 * f * n / (f - n);
  return b / (a - z_ndc);
}

double pixel_to_ndc(double u, int size) { return 2.0 * u / size - 1.0; }

double ndc_to_pixel(double u_ndc, int size) { return (u_ndc + 1.0) * size / 2.0; }

Eigen::Matrix4d relative_transform(const Pose& view_i, const Pose& view_0) {
  Eigen::Matrix4d inv0 = Eigen::Matrix4d::Identity();
  inv0.topLeftCorner<3, 3>() = view_0.rotation.transpose();
  inv0.topRightCorner<3, 1>() = -(view_0.rotation.transpose() * view_0.translation);
  return view_i.matrix() * inv0;
}

PixelProjection project_to_pixel(const Eigen::Vector3d& q, const Intrinsics& c) {
  PixelProjection r;
  r.depth = -q.z();
  if (r.depth > 0.0) {
    r.u = c.cx + c.fx * q.x() / r.depth;
    r.v = c.cy + c.fy * q.y() / r.depth;
  }
  return r;
}

}  // namespace meshref
