#include "meshref/io.hpp"

#include "meshref/meshing.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace meshref {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

// Reads one whitespace-delimited token from a PNM-style header, skipping
// '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) continue;
    break;
  }
  if (c == EOF) return tok;
  tok.push_back(static_cast<char>(c));
  while ((c = in.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
  return tok;
}

}  // namespace

DepthMap read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("pfm: cannot open " + path);
  std::string magic = pnm_token(in);
  if (magic == "PF") fail("pfm: 3-channel file given to single-channel reader: " + path);
  if (magic != "Pf") fail("pfm: bad magic '" + magic + "' in " + path);
  const std::string ws = pnm_token(in), hs = pnm_token(in), ss = pnm_token(in);
  int w = 0, h = 0;
  double scale = 0.0;
  try {
    w = std::stoi(ws);
    h = std::stoi(hs);
    scale = std::stod(ss);
  } catch (const std::exception&) {
    fail("pfm: malformed header in " + path);
  }
  if (w <= 0 || h <= 0) fail("pfm: bad dimensions in " + path);
  if (scale > 0.0) fail("pfm: big-endian file not supported: " + path);
  if (scale == 0.0) fail("pfm: zero scale in " + path);
  // header terminates with exactly one whitespace character, already consumed
  DepthMap d(w, h);
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {  // bottom-to-top storage
    in.read(reinterpret_cast<char*>(row.data()), sizeof(float) * w);
    if (!in) fail("pfm: truncated payload in " + path);
    for (int x = 0; x < w; ++x) {
      const float v = row[x];
      if (std::isnan(v)) {
        d.values[static_cast<size_t>(y) * w + x] = std::numeric_limits<double>::quiet_NaN();
        d.valid[static_cast<size_t>(y) * w + x] = 0;
      } else {
        d.values[static_cast<size_t>(y) * w + x] = v;
        d.valid[static_cast<size_t>(y) * w + x] = 1;
      }
    }
  }
  return d;
}

void write_pfm(const std::string& path, const DepthMap& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("pfm: cannot write " + path);
  out << "Pf\n" << depth.width << " " << depth.height << "\n-1.0\n";
  std::vector<float> row(static_cast<size_t>(depth.width));
  for (int y = depth.height - 1; y >= 0; --y) {
    for (int x = 0; x < depth.width; ++x) {
      row[x] = depth.is_valid(x, y) ? static_cast<float>(depth.at(x, y))
                                    : std::numeric_limits<float>::quiet_NaN();
    }
    out.write(reinterpret_cast<const char*>(row.data()), sizeof(float) * depth.width);
  }
  if (!out) fail("pfm: write failure on " + path);
}

ColorImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("ppm: cannot open " + path);
  const std::string magic = pnm_token(in);
  if (magic != "P6") fail("ppm: bad magic '" + magic + "' in " + path);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(in));
    h = std::stoi(pnm_token(in));
    maxval = std::stoi(pnm_token(in));
  } catch (const std::exception&) {
    fail("ppm: malformed header in " + path);
  }
  if (w <= 0 || h <= 0) fail("ppm: bad dimensions in " + path);
  if (maxval != 255) fail("ppm: maxval must be 255 in " + path);
  ColorImage img(w, h);
  std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), row.size());
    if (!in) fail("ppm: truncated payload in " + path);
    for (int x = 0; x < w; ++x) {
      img.set_pixel(x, y,
                    Eigen::Vector3d(row[3 * x] / 255.0, row[3 * x + 1] / 255.0,
                                    row[3 * x + 2] / 255.0));
    }
  }
  return img;
}

void write_ppm(const std::string& path, const ColorImage& img) {
  img.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("ppm: cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const Eigen::Vector3d c = img.pixel(x, y);
      for (int k = 0; k < 3; ++k) {
        const long q = std::lround(c[k] * 255.0);
        row[3 * x + k] = static_cast<uint8_t>(std::clamp(q, 0l, 255l));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) fail("ppm: write failure on " + path);
}

namespace {

std::string resolve(const fs::path& base, const std::string& rel) {
  fs::path p(rel);
  if (p.is_absolute()) return p.string();
  return (base / p).string();
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path)) fail("manifest: unresolvable path for " + what + ": " + path);
}

}  // namespace

SceneManifest parse_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("manifest: cannot open " + path);
  const fs::path base = fs::path(path).parent_path();

  SceneManifest m;
  std::set<std::string> seen;
  std::set<int> view_ids;
  std::string line;
  bool first_content_line = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;

    const auto want = [&](auto& v, const char* what) {
      if (!(ls >> v)) fail("manifest: line " + std::to_string(line_no) + ": expected " + what);
    };

    if (first_content_line) {
      if (key != "version") fail("manifest: first line must be 'version 1'");
      first_content_line = false;
    }

    if (key == "version") {
      want(m.version, "version number");
      if (m.version != 1) fail("manifest: unsupported version " + std::to_string(m.version));
      seen.insert(key);
    } else if (key == "near") {
      want(m.near_plane, "near value");
      seen.insert(key);
    } else if (key == "far") {
      want(m.far_plane, "far value");
      seen.insert(key);
    } else if (key == "ref_view") {
      want(m.ref_view, "view id");
      seen.insert(key);
    } else if (key == "view") {
      ManifestView v;
      std::string image_rel;
      double qw, qx, qy, qz, tx, ty, tz;
      want(v.id, "view id");
      want(image_rel, "image path");
      want(v.intrinsics.width, "W");
      want(v.intrinsics.height, "H");
      want(v.intrinsics.fx, "fx");
      want(v.intrinsics.fy, "fy");
      want(v.intrinsics.cx, "cx");
      want(v.intrinsics.cy, "cy");
      want(qw, "qw");
      want(qx, "qx");
      want(qy, "qy");
      want(qz, "qz");
      want(tx, "tx");
      want(ty, "ty");
      want(tz, "tz");
      v.image_path = resolve(base, image_rel);
      v.pose = Pose::from_quaternion(qw, qx, qy, qz, Eigen::Vector3d(tx, ty, tz));
      v.intrinsics.validate();
      v.pose.validate();
      if (!view_ids.insert(v.id).second)
        fail("manifest: duplicate view id " + std::to_string(v.id));
      m.views.push_back(std::move(v));
      seen.insert(key);
    } else if (key == "points") {
      std::string rel;
      want(rel, "points path");
      m.points_path = resolve(base, rel);
      seen.insert(key);
    } else if (key == "mono") {
      std::string rel;
      want(rel, "mono path");
      m.mono_path = resolve(base, rel);
      seen.insert(key);
    } else if (key == "gt") {
      std::string rel;
      want(rel, "gt path");
      m.gt_path = resolve(base, rel);
      seen.insert(key);
    } else {
      fail("manifest: unknown key: " + key);
    }
  }

  for (const char* req : {"version", "near", "far", "ref_view", "view", "points", "mono"}) {
    if (!seen.count(req)) fail(std::string("manifest: missing key: ") + req);
  }
  if (!(m.near_plane > 0.0) || !(m.near_plane < m.far_plane))
    fail("manifest: require 0 < near < far");
  if (!view_ids.count(m.ref_view))
    fail("manifest: ref_view " + std::to_string(m.ref_view) + " not among views");
  for (const auto& v : m.views) require_file(v.image_path, "view image");
  require_file(m.points_path, "points");
  require_file(m.mono_path, "mono");
  if (!m.gt_path.empty()) require_file(m.gt_path, "gt");
  return m;
}

SparsePointCloud read_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("points: cannot open " + path);
  SparsePointCloud cloud;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x)) continue;
    if (!(ls >> y >> z)) fail("points: malformed line " + std::to_string(line_no));
    cloud.points.emplace_back(x, y, z);
  }
  cloud.validate();
  return cloud;
}

void write_points(const std::string& path, const SparsePointCloud& cloud) {
  std::ofstream out(path);
  if (!out) fail("points: cannot write " + path);
  char buf[128];
  for (const auto& p : cloud.points) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    out << buf;
  }
}

namespace {

// Strips comments and yields non-empty COLMAP text lines.
std::vector<std::string> colmap_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("colmap: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

ColmapImport import_colmap_text(const std::string& dir, int ref_image_id) {
  const fs::path base(dir);
  std::map<int, Intrinsics> cameras;
  for (const auto& line : colmap_lines((base / "cameras.txt").string())) {
    std::istringstream ls(line);
    int cam_id;
    std::string model;
    Intrinsics c;
    if (!(ls >> cam_id >> model >> c.width >> c.height)) fail("colmap: malformed cameras.txt line");
    if (model == "PINHOLE") {
      if (!(ls >> c.fx >> c.fy >> c.cx >> c.cy)) fail("colmap: malformed PINHOLE params");
    } else if (model == "SIMPLE_PINHOLE") {
      double f;
      if (!(ls >> f >> c.cx >> c.cy)) fail("colmap: malformed SIMPLE_PINHOLE params");
      c.fx = c.fy = f;
    } else {
      fail("colmap: unsupported camera model: " + model);
    }
    c.validate();
    cameras[cam_id] = c;
  }

  ColmapImport result;
  {
    // images.txt alternates an image line with its (possibly empty) 2D point
    // line, so blank lines are significant between pairs
    std::ifstream in((base / "images.txt").string());
    if (!in) fail("colmap: cannot open " + (base / "images.txt").string());
    std::set<int> ids;
    std::string line;
    bool expect_points = false;
    while (std::getline(in, line)) {
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (expect_points) {
        expect_points = false;  // points2D payload is not needed here
        continue;
      }
      if (blank) continue;
      std::istringstream ls(line);
      ColmapView v;
      double qw, qx, qy, qz, tx, ty, tz;
      int cam_id;
      if (!(ls >> v.image_id >> qw >> qx >> qy >> qz >> tx >> ty >> tz >> cam_id >> v.name))
        fail("colmap: malformed images.txt line");
      const auto it = cameras.find(cam_id);
      if (it == cameras.end())
        fail("colmap: image references unknown camera " + std::to_string(cam_id));
      v.intrinsics = it->second;
      v.pose = Pose::from_quaternion(qw, qx, qy, qz, Eigen::Vector3d(tx, ty, tz));
      if (!ids.insert(v.image_id).second) fail("colmap: duplicate image id");
      result.views.push_back(std::move(v));
      expect_points = true;
    }
  }

  for (const auto& line : colmap_lines((base / "points3D.txt").string())) {
    std::istringstream ls(line);
    long long pid;
    double x, y, z, err;
    int r, g, b;
    if (!(ls >> pid >> x >> y >> z >> r >> g >> b >> err)) fail("colmap: malformed points3D.txt line");
    bool in_ref = false;
    int img_id, p2d;
    while (ls >> img_id >> p2d) {
      if (img_id == ref_image_id) in_ref = true;
    }
    if (in_ref) result.cloud.points.emplace_back(x, y, z);
  }
  return result;
}

void export_obj(const DepthMesh& mesh, const View& ref, const ProjectionMatrix& proj,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("obj: cannot write " + path);
  out << "# depth mesh, world-space positions with vertex colors\n";
  char buf[256];
  for (int j = 0; j < mesh.vertex_count(); ++j) {
    const double u_pix = ndc_to_pixel(mesh.u[j] + mesh.du[j], ref.intrinsics.width);
    const double v_pix = ndc_to_pixel(mesh.v[j] + mesh.dv[j], ref.intrinsics.height);
    const double z_lin = reciprocal_to_depth(mesh.z[j], proj) / mesh.fz[j];
    const Eigen::Vector3d cam = unproject(u_pix, v_pix, z_lin, ref.intrinsics);
    const Eigen::Vector3d world = ref.pose.camera_to_world(cam);
    const Eigen::Vector3d& c = mesh.color[j];
    std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g %.6g %.6g %.6g\n", world.x(), world.y(),
                  world.z(), c.x(), c.y(), c.z());
    out << buf;
  }
  for (const auto& f : mesh.faces) {
    out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  }
  if (!out) fail("obj: write failure on " + path);
}

std::vector<int> Scene::aux_indices() const {
  std::vector<int> ids;
  for (int i = 0; i < static_cast<int>(views.size()); ++i) {
    if (i != ref_index) ids.push_back(i);
  }
  return ids;
}

Scene load_scene(const std::string& manifest_path) {
  const SceneManifest m = parse_manifest(manifest_path);
  Scene s;
  s.near_plane = m.near_plane;
  s.far_plane = m.far_plane;
  s.ref_index = -1;
  for (const auto& mv : m.views) {
    View v;
    v.id = mv.id;
    v.intrinsics = mv.intrinsics;
    v.pose = mv.pose;
    v.image = read_ppm(mv.image_path);
    if (v.image.width != v.intrinsics.width || v.image.height != v.intrinsics.height)
      fail("scene: image dimensions do not match intrinsics for view " + std::to_string(mv.id));
    if (mv.id == m.ref_view) s.ref_index = static_cast<int>(s.views.size());
    s.views.push_back(std::move(v));
  }
  s.cloud = read_points(m.points_path);
  s.mono = read_pfm(m.mono_path);
  s.mono.validate(/*require_positive=*/false);  // relative maps may contain 0
  if (s.mono.width != s.ref().intrinsics.width || s.mono.height != s.ref().intrinsics.height)
    fail("scene: mono depth dimensions do not match the reference view");
  if (!m.gt_path.empty()) {
    s.gt = read_pfm(m.gt_path);
    s.gt->validate();
  }
  return s;
}

}  // namespace meshref
