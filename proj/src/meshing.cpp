#include "meshref/meshing.hpp"

#include "meshref/imageops.hpp"

#include <algorithm>
#include <map>
#include <queue>
#include <set>

namespace meshref {

void DepthMesh::validate() const {
  const size_t n = u.size();
  if (v.size() != n || z.size() != n || du.size() != n || dv.size() != n || fz.size() != n ||
      color.size() != n || boundary.size() != n)
    throw ValidationError("mesh: inconsistent vertex arrays");
  const double bu = du_bound() + 1e-12, bv = dv_bound() + 1e-12;
  for (size_t i = 0; i < n; ++i) {
    if (!(std::abs(du[i]) <= bu && std::abs(dv[i]) <= bv))
      throw ValidationError("mesh: coordinate offset outside its bound");
    if (!(fz[i] >= kFzMin && fz[i] <= kFzMax)) throw ValidationError("mesh: fz outside [0.05, 20]");
    if (!(z[i] >= -1.0 && z[i] <= 1.0)) throw ValidationError("mesh: reciprocal depth outside [-1, 1]");
  }
  for (const auto& f : faces) {
    for (int k = 0; k < 3; ++k) {
      if (f[k] < 0 || f[k] >= static_cast<int>(n)) throw ValidationError("mesh: face index out of range");
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
      throw ValidationError("mesh: degenerate face with repeated vertex");
    const double area2 = (u[f[1]] - u[f[0]]) * (v[f[2]] - v[f[0]]) -
                         (v[f[1]] - v[f[0]]) * (u[f[2]] - u[f[0]]);
    if (area2 == 0.0) throw ValidationError("mesh: zero-area face in base coordinates");
  }
}

Eigen::Vector3d unproject(double u, double v, double z, const Intrinsics& c) {
  if (!(z > 0.0)) throw ValidationError("unproject: depth must be positive");
  return {(u - c.cx) * z / c.fx, (v - c.cy) * z / c.fy, -z};
}

DepthMesh build_depth_mesh(const DepthMap& depth, const ColorImage& image, const Intrinsics& c,
                           int d, const ProjectionMatrix& proj) {
  if (d < 1) throw ValidationError("build_depth_mesh: downsample factor must be >= 1");
  if (depth.width != c.width || depth.height != c.height || image.width != c.width ||
      image.height != c.height)
    throw ValidationError("build_depth_mesh: dimensions do not match intrinsics");

  const int gw = (c.width + d - 1) / d;
  const int gh = (c.height + d - 1) / d;

  ScalarImage depth_img(depth.width, depth.height, 0.0);
  depth_img.values = depth.values;

  DepthMesh mesh;
  mesh.grid_d = d;
  mesh.image_width = c.width;
  mesh.image_height = c.height;

  std::vector<int> vid(static_cast<size_t>(gw) * gh, -1);
  std::vector<double> zlin(static_cast<size_t>(gw) * gh, 0.0);
  for (int j = 0; j < gh; ++j) {
    for (int i = 0; i < gw; ++i) {
      // continuous pixel position, clamped so the sample stays in-image
      double up = std::min(i * static_cast<double>(d) + d / 2.0, c.width - 0.5);
      double vp = std::min(j * static_cast<double>(d) + d / 2.0, c.height - 0.5);
      const MaskedSample s = bilinear_sample_masked(depth_img, depth.valid, up - 0.5, vp - 0.5);
      if (!s.ok) continue;  // no valid support: vertex dropped
      const double z = std::clamp(s.value, proj.near_plane, proj.far_plane);
      vid[static_cast<size_t>(j) * gw + i] = mesh.vertex_count();
      zlin[static_cast<size_t>(j) * gw + i] = z;
      mesh.u.push_back(pixel_to_ndc(up, c.width));
      mesh.v.push_back(pixel_to_ndc(vp, c.height));
      mesh.z.push_back(depth_to_reciprocal(z, proj));
      mesh.du.push_back(0.0);
      mesh.dv.push_back(0.0);
      mesh.fz.push_back(1.0);
      mesh.color.push_back(bilinear_sample_color(image, up - 0.5, vp - 0.5));
      mesh.boundary.push_back(i == 0 || j == 0 || i == gw - 1 || j == gh - 1);
    }
  }

  for (int j = 0; j + 1 < gh; ++j) {
    for (int i = 0; i + 1 < gw; ++i) {
      const int v00 = vid[static_cast<size_t>(j) * gw + i];
      const int v10 = vid[static_cast<size_t>(j) * gw + i + 1];
      const int v01 = vid[static_cast<size_t>(j + 1) * gw + i];
      const int v11 = vid[static_cast<size_t>(j + 1) * gw + i + 1];
      if (v00 < 0 || v10 < 0 || v01 < 0 || v11 < 0) continue;
      const double diag_a = std::abs(zlin[static_cast<size_t>(j) * gw + i] -
                                     zlin[static_cast<size_t>(j + 1) * gw + i + 1]);
      const double diag_b = std::abs(zlin[static_cast<size_t>(j) * gw + i + 1] -
                                     zlin[static_cast<size_t>(j + 1) * gw + i]);
      if (diag_a <= diag_b) {
        mesh.faces.push_back({v00, v10, v11});
        mesh.faces.push_back({v00, v11, v01});
      } else {
        mesh.faces.push_back({v00, v10, v01});
        mesh.faces.push_back({v10, v11, v01});
      }
    }
  }
  return mesh;
}

namespace {

using Quadric = Eigen::Matrix4d;

Quadric face_quadric(const DepthMesh& m, const std::array<int, 3>& f) {
  const Eigen::Vector3d p0(m.u[f[0]], m.v[f[0]], m.z[f[0]]);
  const Eigen::Vector3d p1(m.u[f[1]], m.v[f[1]], m.z[f[1]]);
  const Eigen::Vector3d p2(m.u[f[2]], m.v[f[2]], m.z[f[2]]);
  Eigen::Vector3d n = (p1 - p0).cross(p2 - p0);
  const double len = n.norm();
  if (len < 1e-15) return Quadric::Zero();
  n /= len;
  Eigen::Vector4d plane(n.x(), n.y(), n.z(), -n.dot(p0));
  return plane * plane.transpose();
}

double quadric_cost(const Quadric& q, double x, double y, double z) {
  const Eigen::Vector4d p(x, y, z, 1.0);
  return p.dot(q * p);
}

struct Candidate {
  double cost;
  int loser;
  int winner;
  uint64_t stamp;  // version sum at creation; stale entries are skipped
};
struct CandidateOrder {
  bool operator()(const Candidate& a, const Candidate& b) const {
    if (a.cost != b.cost) return a.cost > b.cost;
    if (a.loser != b.loser) return a.loser > b.loser;
    return a.winner > b.winner;
  }
};

}  // namespace

DecimateResult decimate(const DepthMesh& mesh, double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
    throw ValidationError("decimate: keep ratio must be in (0, 1]");
  DecimateResult result;
  const int n = mesh.vertex_count();
  result.old_to_new.assign(n, -1);
  if (keep_ratio == 1.0 || n == 0) {
    result.mesh = mesh;
    for (int i = 0; i < n; ++i) result.old_to_new[i] = i;
    return result;
  }
  const int target = static_cast<int>(std::ceil(keep_ratio * n));

  std::vector<Quadric> quadric(n, Quadric::Zero());
  std::vector<std::set<int>> vertex_faces(n);
  std::vector<std::array<int, 3>> faces = mesh.faces;
  std::vector<uint8_t> face_alive(faces.size(), 1);
  for (size_t fi = 0; fi < faces.size(); ++fi) {
    const Quadric q = face_quadric(mesh, faces[fi]);
    for (int k = 0; k < 3; ++k) {
      quadric[faces[fi][k]] += q;
      vertex_faces[faces[fi][k]].insert(static_cast<int>(fi));
    }
  }

  std::vector<uint8_t> vertex_alive(n, 1);
  std::vector<uint64_t> version(n, 0);
  int alive = n;

  std::priority_queue<Candidate, std::vector<Candidate>, CandidateOrder> heap;
  const auto push_edge = [&](int a, int b) {
    // collapse removes the loser; boundary vertices are never losers
    for (auto [loser, winner] : {std::pair{a, b}, std::pair{b, a}}) {
      if (mesh.boundary[loser]) continue;
      const double cost = quadric_cost(quadric[loser] + quadric[winner], mesh.u[winner],
                                       mesh.v[winner], mesh.z[winner]);
      heap.push({cost, loser, winner, version[loser] + version[winner]});
    }
  };

  {
    std::set<std::pair<int, int>> edges;
    for (const auto& f : faces) {
      for (int k = 0; k < 3; ++k) {
        const int a = std::min(f[k], f[(k + 1) % 3]);
        const int b = std::max(f[k], f[(k + 1) % 3]);
        edges.insert({a, b});
      }
    }
    for (const auto& [a, b] : edges) push_edge(a, b);
  }

  const auto face_area2 = [&](const std::array<int, 3>& f) {
    return (mesh.u[f[1]] - mesh.u[f[0]]) * (mesh.v[f[2]] - mesh.v[f[0]]) -
           (mesh.v[f[1]] - mesh.v[f[0]]) * (mesh.u[f[2]] - mesh.u[f[0]]);
  };

  while (alive > target && !heap.empty()) {
    const Candidate c = heap.top();
    heap.pop();
    if (!vertex_alive[c.loser] || !vertex_alive[c.winner]) continue;
    if (c.stamp != version[c.loser] + version[c.winner]) continue;
    // loser and winner must still share a face
    bool adjacent = false;
    for (int fi : vertex_faces[c.loser]) {
      if (!face_alive[fi]) continue;
      const auto& f = faces[fi];
      if (f[0] == c.winner || f[1] == c.winner || f[2] == c.winner) {
        adjacent = true;
        break;
      }
    }
    if (!adjacent) continue;

    // reject collapses that flip or squash a surviving face in (u', v')
    bool ok = true;
    for (int fi : vertex_faces[c.loser]) {
      if (!face_alive[fi]) continue;
      std::array<int, 3> f = faces[fi];
      if (f[0] == c.winner || f[1] == c.winner || f[2] == c.winner) continue;  // removed
      const double before = face_area2(f);
      for (int k = 0; k < 3; ++k) {
        if (f[k] == c.loser) f[k] = c.winner;
      }
      const double after = face_area2(f);
      if (std::abs(after) < 1e-18 || (before > 0.0) != (after > 0.0)) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    // apply
    result.max_collapse_cost = std::max(result.max_collapse_cost, c.cost);
    ++result.collapses;
    quadric[c.winner] += quadric[c.loser];
    std::set<int> neighbors;
    for (int fi : std::vector<int>(vertex_faces[c.loser].begin(), vertex_faces[c.loser].end())) {
      if (!face_alive[fi]) continue;
      auto& f = faces[fi];
      if (f[0] == c.winner || f[1] == c.winner || f[2] == c.winner) {
        face_alive[fi] = 0;
        for (int k = 0; k < 3; ++k) vertex_faces[f[k]].erase(fi);
        continue;
      }
      for (int k = 0; k < 3; ++k) {
        if (f[k] == c.loser) f[k] = c.winner;
        neighbors.insert(f[k]);
      }
      vertex_faces[c.winner].insert(fi);
      vertex_faces[c.loser].erase(fi);
    }
    vertex_alive[c.loser] = 0;
    --alive;
    // only the winner's quadric changed; other entries stay valid
    ++version[c.loser];
    ++version[c.winner];
    (void)neighbors;

    // refresh candidates around the winner
    std::set<int> ring;
    for (int fi : vertex_faces[c.winner]) {
      if (!face_alive[fi]) continue;
      for (int k = 0; k < 3; ++k) {
        if (faces[fi][k] != c.winner) ring.insert(faces[fi][k]);
      }
    }
    for (int nb : ring) push_edge(c.winner, nb);
  }

  // compact
  DepthMesh& out = result.mesh;
  out.grid_d = mesh.grid_d;
  out.image_width = mesh.image_width;
  out.image_height = mesh.image_height;
  for (int i = 0; i < n; ++i) {
    if (!vertex_alive[i]) continue;
    result.old_to_new[i] = out.vertex_count();
    out.u.push_back(mesh.u[i]);
    out.v.push_back(mesh.v[i]);
    out.z.push_back(mesh.z[i]);
    out.du.push_back(mesh.du[i]);
    out.dv.push_back(mesh.dv[i]);
    out.fz.push_back(mesh.fz[i]);
    out.color.push_back(mesh.color[i]);
    out.boundary.push_back(mesh.boundary[i]);
  }
  for (size_t fi = 0; fi < faces.size(); ++fi) {
    if (!face_alive[fi]) continue;
    out.faces.push_back({result.old_to_new[faces[fi][0]], result.old_to_new[faces[fi][1]],
                         result.old_to_new[faces[fi][2]]});
  }
  return result;
}

}  // namespace meshref
