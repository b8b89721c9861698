#include "fda/skeleton.hpp"

#include <array>

namespace fda::metrics {

namespace {

constexpr int idx(int z, int y, int x) { return (z + 1) * 9 + (y + 1) * 3 + (x + 1); }

int manhattan(int i) {
  const int z = i / 9 - 1, y = (i / 3) % 3 - 1, x = i % 3 - 1;
  return std::abs(z) + std::abs(y) + std::abs(x);
}

bool adjacent(int a, int b, int max_manhattan) {
  const int dz = std::abs(a / 9 - b / 9), dy = std::abs((a / 3) % 3 - (b / 3) % 3), dx = std::abs(a % 3 - b % 3);
  if (dz > 1 || dy > 1 || dx > 1) return false;
  const int m = dz + dy + dx;
  return m >= 1 && m <= max_manhattan;
}

// Components of `cells` (a subset of the 27 positions) under the given adjacency.
template <class Pred>
int count_components(const std::array<bool, 27>& cells, int max_manhattan, Pred&& keep_component) {
  std::array<bool, 27> seen{};
  int count = 0;
  for (int s = 0; s < 27; ++s) {
    if (!cells[s] || seen[s]) continue;
    std::array<int, 27> stack{};
    int top = 0;
    stack[top++] = s;
    seen[s] = true;
    bool keep = false;
    while (top) {
      const int c = stack[--top];
      keep = keep || keep_component(c);
      for (int n = 0; n < 27; ++n)
        if (cells[n] && !seen[n] && adjacent(c, n, max_manhattan)) {
          seen[n] = true;
          stack[top++] = n;
        }
    }
    if (keep) ++count;
  }
  return count;
}

}  // namespace

bool is_simple_point(const bool nbhd[27]) {
  // Foreground: 26-connected components in N26 minus centre must be exactly one.
  std::array<bool, 27> fg{};
  for (int i = 0; i < 27; ++i) fg[i] = i != 13 && nbhd[i];
  if (count_components(fg, 3, [](int) { return true; }) != 1) return false;
  // Background: 6-connected components of N18 minus centre that touch a 6-neighbour of the centre.
  std::array<bool, 27> bg{};
  for (int i = 0; i < 27; ++i) bg[i] = i != 13 && !nbhd[i] && manhattan(i) <= 2;
  return count_components(bg, 1, [](int c) { return manhattan(c) == 1; }) == 1;
}

int neighbor_count(const MaskVolume& m, int64_t z, int64_t y, int64_t x) {
  int n = 0;
  for (const Voxel& d : neighborhood(26)) {
    const int64_t nz = z + d.z, ny = y + d.y, nx = x + d.x;
    if (m.shape.contains(nz, ny, nx) && m.at(nz, ny, nx)) ++n;
  }
  return n;
}

Skeleton skeletonize(const MaskVolume& m) {
  if (count_foreground(m) == 0) throw ValidationError("skeletonize requires a non-empty mask");
  MaskVolume s = m;
  for (auto& b : s.data) b = b ? 1 : 0;
  const Shape3 sh = s.shape;

  const auto gather = [&](int64_t z, int64_t y, int64_t x, bool out[27]) {
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int64_t nz = z + dz, ny = y + dy, nx = x + dx;
          out[idx(dz, dy, dx)] = sh.contains(nz, ny, nx) && s.at(nz, ny, nx);
        }
  };

  static constexpr std::array<Voxel, 6> kDirections{
      Voxel{0, -1, 0}, Voxel{0, 1, 0}, Voxel{0, 0, 1}, Voxel{0, 0, -1}, Voxel{1, 0, 0}, Voxel{-1, 0, 0}};
  std::vector<Voxel> candidates;
  bool nb[27];
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Voxel& dir : kDirections) {
      candidates.clear();
      for (int64_t z = 0; z < sh.d; ++z)
        for (int64_t y = 0; y < sh.h; ++y)
          for (int64_t x = 0; x < sh.w; ++x) {
            if (!s.at(z, y, x)) continue;
            const int64_t bz = z + dir.z, by = y + dir.y, bx = x + dir.x;
            if (sh.contains(bz, by, bx) && s.at(bz, by, bx)) continue;  // not a border voxel in this direction
            if (neighbor_count(s, z, y, x) == 1) continue;                // end point
            gather(z, y, x, nb);
            if (is_simple_point(nb)) candidates.push_back({z, y, x});
          }
      // Sequential re-check: earlier deletions may have made a candidate non-simple.
      for (const Voxel& v : candidates) {
        if (neighbor_count(s, v.z, v.y, v.x) == 1) continue;
        gather(v.z, v.y, v.x, nb);
        if (!is_simple_point(nb)) continue;
        s.at(v) = 0;
        changed = true;
      }
    }
  }
  return {std::move(s)};
}

int64_t euler_characteristic(const MaskVolume& m) {
  // Cubical complex on a doubled lattice: cell (2z+a, 2y+b, 2x+c) with a,b,c in {0,1,2}.
  const Shape3 s = m.shape;
  const Shape3 big{2 * s.d + 1, 2 * s.h + 1, 2 * s.w + 1};
  Grid<uint8_t> cells(big, {}, 0);
  for (int64_t z = 0; z < s.d; ++z)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x) {
        if (!m.at(z, y, x)) continue;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) cells.at(2 * z + a, 2 * y + b, 2 * x + c) = 1;
      }
  int64_t chi = 0;
  for (int64_t z = 0; z < big.d; ++z)
    for (int64_t y = 0; y < big.h; ++y)
      for (int64_t x = 0; x < big.w; ++x) {
        if (!cells.at(z, y, x)) continue;
        const int dim = int(z % 2) + int(y % 2) + int(x % 2);  // 0 vertex, 1 edge, 2 face, 3 cube
        chi += dim % 2 == 0 ? 1 : -1;
      }
  return chi;
}

}  // namespace fda::metrics
