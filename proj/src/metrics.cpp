#include "fda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace fda::metrics {

namespace {

bool touches(const Voxel& a, const Voxel& b) {
  return std::abs(a.z - b.z) <= 1 && std::abs(a.y - b.y) <= 1 && std::abs(a.x - b.x) <= 1 && !(a == b);
}

struct Edge {
  int a = -1, b = -1;  // node ids; equal for loops
  std::vector<Voxel> path;
  bool alive = true;
};

}  // namespace

double BranchSet::total_length_mm() const {
  double t = 0.0;
  for (const auto& b : branches) t += b.length_mm;
  return t;
}

double path_length_mm(const std::vector<Voxel>& path, const Spacing& sp) {
  double len = 0.0;
  for (size_t i = 1; i < path.size(); ++i) {
    const double dz = double(path[i].z - path[i - 1].z) * sp.z;
    const double dy = double(path[i].y - path[i - 1].y) * sp.y;
    const double dx = double(path[i].x - path[i - 1].x) * sp.x;
    len += std::sqrt(dz * dz + dy * dy + dx * dx);
  }
  return len;
}

BranchSet parse_branches(const Skeleton& skel, const Spacing& spacing) {
  const MaskVolume& s = skel.voxels;
  const Shape3 sh = s.shape;

  // Node voxels (degree != 2) grouped into 26-connected clusters.
  Grid<int32_t> node_of(sh, {}, -1);
  MaskVolume node_mask(sh, {}, 0), chain_mask(sh, {}, 0);
  for (int64_t z = 0; z < sh.d; ++z)
    for (int64_t y = 0; y < sh.h; ++y)
      for (int64_t x = 0; x < sh.w; ++x) {
        if (!s.at(z, y, x)) continue;
        (neighbor_count(s, z, y, x) == 2 ? chain_mask : node_mask).at(z, y, x) = 1;
      }
  const ComponentLabels nodes = label_components(node_mask, 26);
  for (size_t i = 0; i < node_of.data.size(); ++i) node_of.data[i] = nodes.labels.data[i] - 1;
  int node_count = static_cast<int>(nodes.sizes.size());

  std::vector<Edge> edges;
  const auto node_neighbors = [&](const Voxel& v) {
    std::vector<Voxel> out;
    for (const Voxel& d : neighborhood(26)) {
      const Voxel n{v.z + d.z, v.y + d.y, v.x + d.x};
      if (sh.contains(n.z, n.y, n.x) && node_of.at(n) >= 0) out.push_back(n);
    }
    return out;
  };

  // Chains of degree-2 voxels become edges between the clusters they touch.
  const ComponentLabels chains = label_components(chain_mask, 26);
  std::vector<std::vector<Voxel>> chain_voxels(chains.sizes.size());
  for (int64_t z = 0; z < sh.d; ++z)
    for (int64_t y = 0; y < sh.h; ++y)
      for (int64_t x = 0; x < sh.w; ++x)
        if (const int32_t c = chains.labels.at(z, y, x); c > 0) chain_voxels[c - 1].push_back({z, y, x});

  for (const auto& members : chain_voxels) {
    // Start at a member touching a node, else anywhere (isolated loop).
    size_t start = 0;
    for (size_t i = 0; i < members.size(); ++i)
      if (!node_neighbors(members[i]).empty()) {
        start = i;
        break;
      }
    std::vector<Voxel> path{members[start]};
    std::vector<bool> used(members.size(), false);
    used[start] = true;
    for (bool grew = true; grew;) {
      grew = false;
      for (size_t i = 0; i < members.size(); ++i)
        if (!used[i] && touches(path.back(), members[i])) {
          used[i] = true;
          path.push_back(members[i]);
          grew = true;
          break;
        }
    }
    const auto head = node_neighbors(path.front());
    const auto tail = node_neighbors(path.back());
    Edge e;
    if (head.empty() && tail.empty()) {
      // Isolated cycle: introduce a node at its first voxel.
      const int id = node_count++;
      e.a = e.b = id;
      path.push_back(path.front());
    } else {
      const Voxel h = head.empty() ? tail.front() : head.front();
      Voxel t = tail.empty() ? h : tail.front();
      // Prefer a different cluster at the tail when one exists.
      for (const Voxel& c : tail)
        if (node_of.at(c) != node_of.at(h)) {
          t = c;
          break;
        }
      path.insert(path.begin(), h);
      path.push_back(t);
      e.a = node_of.at(h);
      e.b = node_of.at(t);
    }
    e.path = std::move(path);
    edges.push_back(std::move(e));
  }

  // Directly adjacent voxels of different node clusters.
  std::map<std::pair<int, int>, bool> linked;
  for (int64_t z = 0; z < sh.d; ++z)
    for (int64_t y = 0; y < sh.h; ++y)
      for (int64_t x = 0; x < sh.w; ++x) {
        const int a = node_of.at(z, y, x);
        if (a < 0) continue;
        for (const Voxel& n : node_neighbors({z, y, x})) {
          const int b = node_of.at(n);
          if (b <= a || linked[{a, b}]) continue;
          linked[{a, b}] = true;
          edges.push_back({a, b, {Voxel{z, y, x}, n}, true});
        }
      }

  // Dissolve pass-through nodes (exactly two incident edge ends, no self loop).
  for (bool merged = true; merged;) {
    merged = false;
    for (int node = 0; node < node_count && !merged; ++node) {
      std::vector<int> inc;
      int ends = 0;
      for (size_t i = 0; i < edges.size(); ++i) {
        if (!edges[i].alive) continue;
        const int k = (edges[i].a == node) + (edges[i].b == node);
        ends += k;
        if (k) inc.push_back(static_cast<int>(i));
      }
      if (ends != 2 || inc.size() != 2) continue;
      Edge& e1 = edges[inc[0]];
      Edge& e2 = edges[inc[1]];
      if (e1.a == node) {
        std::reverse(e1.path.begin(), e1.path.end());
        std::swap(e1.a, e1.b);
      }
      if (e2.b == node) {
        std::reverse(e2.path.begin(), e2.path.end());
        std::swap(e2.a, e2.b);
      }
      auto it = e2.path.begin();
      if (!e1.path.empty() && e1.path.back() == *it) ++it;
      e1.path.insert(e1.path.end(), it, e2.path.end());
      e1.b = e2.b;
      e2.alive = false;
      merged = true;
    }
  }

  BranchSet out;
  for (auto& e : edges) {
    if (!e.alive) continue;
    Branch b{std::move(e.path), 0.0};
    b.length_mm = path_length_mm(b.path, spacing);
    if (b.length_mm > 0.0) out.branches.push_back(std::move(b));
  }
  // A skeleton that is a single voxel has no edges; report it as one zero-length branch.
  if (out.branches.empty() && count_foreground(s) > 0) {
    for (int64_t i = 0; i < sh.numel(); ++i)
      if (s.data[i]) {
        const Voxel v{i / (sh.h * sh.w), (i / sh.w) % sh.h, i % sh.w};
        out.branches.push_back({{v}, 0.0});
        break;
      }
  }
  return out;
}

BranchSet branches_from_centerline(const std::vector<phantom::CenterlineBranch>& centerline, const Shape3& shape,
                                   const Spacing& spacing) {
  BranchSet out;
  for (const auto& cb : centerline) {
    Branch b;
    for (const Voxel& v : phantom::voxelize_polyline(cb.points))
      if (shape.contains(v.z, v.y, v.x)) b.path.push_back(v);
    b.length_mm = path_length_mm(b.path, spacing);
    out.branches.push_back(std::move(b));
  }
  return out;
}

double length_rate(const BranchSet& gt, const MaskVolume& pred) {
  const double total = gt.total_length_mm();
  if (gt.branches.empty() || total <= 0.0) throw ValidationError("length_rate requires a non-empty ground truth");
  double hit = 0.0;
  for (const auto& b : gt.branches)
    for (size_t i = 1; i < b.path.size(); ++i)
      if (pred.at(b.path[i - 1]) && pred.at(b.path[i])) hit += path_length_mm({b.path[i - 1], b.path[i]}, pred.spacing);
  return 100.0 * hit / total;
}

std::vector<bool> detected_branches(const BranchSet& gt, const MaskVolume& pred, double frac) {
  std::vector<bool> out;
  for (const auto& b : gt.branches) {
    const auto inside = std::count_if(b.path.begin(), b.path.end(), [&](const Voxel& v) { return pred.at(v) != 0; });
    out.push_back(!b.path.empty() && double(inside) >= frac * double(b.path.size()));
  }
  return out;
}

double branch_rate(const BranchSet& gt, const MaskVolume& pred, double frac) {
  if (gt.branches.empty()) throw ValidationError("branch_rate requires a non-empty ground truth");
  const auto flags = detected_branches(gt, pred, frac);
  return 100.0 * double(std::count(flags.begin(), flags.end(), true)) / double(flags.size());
}

double dsc(const MaskVolume& pred, const MaskVolume& gt) {
  if (!(pred.shape == gt.shape)) throw ValidationError("dsc: prediction and ground truth grids differ");
  int64_t inter = 0, p = 0, g = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
    inter += a && b;
    p += a;
    g += b;
  }
  if (p + g == 0) return 100.0;
  return 100.0 * 2.0 * double(inter) / double(p + g);
}

MetricsReport evaluate(const MaskVolume& pred, const MaskVolume& gt,
                       const std::optional<std::vector<phantom::CenterlineBranch>>& centerline,
                       const EvalOptions& opt) {
  if (!(pred.shape == gt.shape)) throw ValidationError("evaluate: prediction and ground truth grids differ");
  const MaskVolume kept = largest_component(pred, opt.connectivity);
  MetricsReport r;
  BranchSet tree;
  if (centerline && !centerline->empty()) {
    tree = branches_from_centerline(*centerline, gt.shape, gt.spacing);
    r.centerline_source = "phantom";
  } else {
    tree = parse_branches(skeletonize(gt), gt.spacing);
    r.centerline_source = "skeleton";
  }
  r.length_rate = length_rate(tree, kept);
  r.branch_detected = detected_branches(tree, kept, opt.branch_fraction);
  r.branch_rate = branch_rate(tree, kept, opt.branch_fraction);
  r.dsc = dsc(kept, gt);
  r.gt_total_length_mm = tree.total_length_mm();
  r.gt_branch_count = static_cast<int64_t>(tree.branches.size());
  r.branch_fraction = opt.branch_fraction;
  return r;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["length_rate"] = r.length_rate;
  j["branch_rate"] = r.branch_rate;
  j["dsc"] = r.dsc;
  j["branch_detected"] = r.branch_detected;
  j["gt_total_length_mm"] = r.gt_total_length_mm;
  j["gt_branch_count"] = r.gt_branch_count;
  j["branch_fraction"] = r.branch_fraction;
  j["centerline_source"] = r.centerline_source;
  return j;
}

}  // namespace fda::metrics
