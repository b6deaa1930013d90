#pragma once

#include "meshref/core.hpp"

#include <optional>
#include <string>
#include <vector>

namespace meshref {

struct DepthMesh;  // meshing.hpp

// Parsed scene manifest. All paths are resolved against the manifest's
// directory.
struct ManifestView {
  int id = 0;
  std::string image_path;
  Intrinsics intrinsics;
  Pose pose;
};

struct SceneManifest {
  int version = 1;
  double near_plane = 0.0;
  double far_plane = 0.0;
  int ref_view = 0;
  std::vector<ManifestView> views;
  std::string points_path;
  std::string mono_path;
  std::string gt_path;  // empty when absent
};

// Single-channel PFM, little-endian (scale -1.0), bottom-to-top rows; NaN
// encodes invalid pixels. Rejects 3-channel headers and big-endian files.
DepthMap read_pfm(const std::string& path);
void write_pfm(const std::string& path, const DepthMap& depth);

// Binary PPM (P6, maxval 255). Write quantizes round-to-nearest; read maps
// byte b to b/255.
ColorImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ColorImage& img);

// Line-oriented manifest (UTF-8, '\n', '#' comments). Unknown keys are
// rejected; the returned manifest is fully validated and all referenced
// files exist.
SceneManifest parse_manifest(const std::string& path);

// One "x y z" line per world-space point, meters.
SparsePointCloud read_points(const std::string& path);
void write_points(const std::string& path, const SparsePointCloud& cloud);

// COLMAP text export (cameras.txt, images.txt, points3D.txt). Supports
// PINHOLE and SIMPLE_PINHOLE cameras; 3D points are filtered to those with a
// track observation in `ref_image_id`.
struct ColmapView {
  int image_id = 0;
  std::string name;
  Intrinsics intrinsics;
  Pose pose;
};
struct ColmapImport {
  std::vector<ColmapView> views;
  SparsePointCloud cloud;
};
ColmapImport import_colmap_text(const std::string& dir, int ref_image_id);

// Writes the mesh as OBJ with world-space positions (unprojected through the
// reference camera, per-vertex parameters applied), 1-indexed faces, and
// per-vertex colors appended to the `v` lines.
void export_obj(const DepthMesh& mesh, const View& ref, const ProjectionMatrix& proj,
                const std::string& path);

// Fully loaded scene.
struct Scene {
  double near_plane = 0.0;
  double far_plane = 0.0;
  int ref_index = 0;  // index into views
  std::vector<View> views;
  SparsePointCloud cloud;
  DepthMap mono;
  std::optional<DepthMap> gt;

  const View& ref() const { return views[ref_index]; }
  std::vector<int> aux_indices() const;
};
Scene load_scene(const std::string& manifest_path);

}  // namespace meshref
