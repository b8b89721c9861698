#include "fda/sdm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fda::sdm {

namespace {

bool is_surface(const MaskVolume& m, int64_t z, int64_t y, int64_t x) {
  for (const Voxel& d : neighborhood(6)) {
    const int64_t nz = z + d.z, ny = y + d.y, nx = x + d.x;
    if (!m.shape.contains(nz, ny, nx) || !m.at(nz, ny, nx)) return true;
  }
  return false;
}

// Rational a/b with b > 0.
struct Ratio {
  __int128 num;
  __int128 den;
};
bool less_equal(const Ratio& a, const Ratio& b) { return a.num * b.den <= b.num * a.den; }

// 1D squared distance transform along one line: out[p] = min_q f[q] + (p - q)^2.
// Integer version: f[q] < 0 marks "no source". Breakpoints are kept as exact rationals.
void envelope_1d(const std::vector<int64_t>& f, std::vector<int64_t>& out, std::vector<int64_t>& v,
                 std::vector<Ratio>& z) {
  const int64_t n = static_cast<int64_t>(f.size());
  const auto cross = [&](int64_t q, int64_t r) {  // abscissa where parabolas q and r (r < q) meet
    return Ratio{(f[q] + q * q) - (f[r] + r * r), 2 * (q - r)};
  };
  int64_t k = -1;
  for (int64_t q = 0; q < n; ++q) {
    if (f[q] < 0) continue;
    while (k > 0 && less_equal(cross(q, v[k]), z[k])) --k;
    ++k;
    v[k] = q;
    if (k > 0) z[k] = cross(q, v[k - 1]);
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), -1);
    return;
  }
  int64_t j = 0;
  for (int64_t p = 0; p < n; ++p) {
    while (j < k && z[j + 1].num < __int128(p) * z[j + 1].den) ++j;
    const int64_t d = p - v[j];
    out[p] = f[v[j]] + d * d;
  }
}

void envelope_1d(const std::vector<double>& f, std::vector<double>& out, double w, std::vector<int64_t>& v,
                 std::vector<double>& z) {
  const int64_t n = static_cast<int64_t>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  int64_t k = -1;
  const auto cross = [&](int64_t q, int64_t r) {
    return ((f[q] + w * double(q) * double(q)) - (f[r] + w * double(r) * double(r))) / (2.0 * w * double(q - r));
  };
  for (int64_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    while (k > 0 && cross(q, v[k]) <= z[k]) --k;
    ++k;
    v[k] = q;
    z[k] = k > 0 ? cross(q, v[k - 1]) : -inf;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), inf);
    return;
  }
  int64_t j = 0;
  for (int64_t p = 0; p < n; ++p) {
    while (j < k && z[j + 1] < double(p)) ++j;
    const double d = double(p - v[j]);
    out[p] = f[v[j]] + w * d * d;
  }
}

// Applies `line_fn(in, out, axis)` along every line of `axis`.
template <class T, class Fn>
void for_each_line(Grid<T>& g, int axis, Fn&& line_fn) {
  const Shape3 s = g.shape;
  const int64_t n = s[axis];
  const int64_t stride = axis == 0 ? s.h * s.w : (axis == 1 ? s.w : 1);
  std::vector<T> in(n), out(n);
  const int64_t outer_a = axis == 0 ? s.h : s.d;
  const int64_t outer_b = axis == 2 ? s.h : s.w;
  for (int64_t a = 0; a < outer_a; ++a)
    for (int64_t b = 0; b < outer_b; ++b) {
      int64_t base;
      if (axis == 0) base = s.index(0, a, b);
      else if (axis == 1) base = s.index(a, 0, b);
      else base = s.index(a, b, 0);
      for (int64_t i = 0; i < n; ++i) in[i] = g.data[base + i * stride];
      line_fn(in, out);
      for (int64_t i = 0; i < n; ++i) g.data[base + i * stride] = out[i];
    }
}

}  // namespace

std::vector<Voxel> extract_surface(const MaskVolume& m) {
  std::vector<Voxel> out;
  for (int64_t z = 0; z < m.shape.d; ++z)
    for (int64_t y = 0; y < m.shape.h; ++y)
      for (int64_t x = 0; x < m.shape.w; ++x)
        if (m.at(z, y, x) && is_surface(m, z, y, x)) out.push_back({z, y, x});
  return out;
}

MaskVolume surface_mask(const MaskVolume& m) {
  MaskVolume out(m.shape, m.spacing, 0);
  for (const Voxel& v : extract_surface(m)) out.at(v) = 1;
  return out;
}

Grid<int64_t> squared_distance_transform(const MaskVolume& sources) {
  Grid<int64_t> g(sources.shape, sources.spacing, -1);
  for (size_t i = 0; i < g.data.size(); ++i)
    if (sources.data[i]) g.data[i] = 0;
  const int64_t longest = std::max({g.shape.d, g.shape.h, g.shape.w});
  std::vector<int64_t> v(longest);
  std::vector<Ratio> z(longest + 1);
  for (int axis = 2; axis >= 0; --axis)
    for_each_line(g, axis, [&](const std::vector<int64_t>& in, std::vector<int64_t>& out) {
      envelope_1d(in, out, v, z);
    });
  return g;
}

Grid<double> squared_distance_transform(const MaskVolume& sources, const Spacing& spacing) {
  const double inf = std::numeric_limits<double>::infinity();
  Grid<double> g(sources.shape, sources.spacing, inf);
  for (size_t i = 0; i < g.data.size(); ++i)
    if (sources.data[i]) g.data[i] = 0.0;
  const int64_t longest = std::max({g.shape.d, g.shape.h, g.shape.w});
  std::vector<int64_t> v(longest);
  std::vector<double> z(longest + 1);
  for (int axis = 2; axis >= 0; --axis) {
    const double w = spacing[axis] * spacing[axis];
    for_each_line(g, axis, [&](const std::vector<double>& in, std::vector<double>& out) {
      envelope_1d(in, out, w, v, z);
    });
  }
  return g;
}

Grid<double> signed_distance(const MaskVolume& m, bool spacing_aware) {
  if (count_foreground(m) == 0) throw ValidationError("sdm_compute requires at least one foreground voxel");
  const MaskVolume surface = surface_mask(m);
  Grid<double> out(m.shape, m.spacing, 0.0);
  if (spacing_aware) {
    const Grid<double> sq = squared_distance_transform(surface, m.spacing);
    for (size_t i = 0; i < out.data.size(); ++i) {
      const double d = std::sqrt(sq.data[i]);
      out.data[i] = surface.data[i] ? 0.0 : (m.data[i] ? -d : d);
    }
  } else {
    const Grid<int64_t> sq = squared_distance_transform(surface);
    for (size_t i = 0; i < out.data.size(); ++i) {
      const double d = std::sqrt(static_cast<double>(sq.data[i]));
      out.data[i] = surface.data[i] ? 0.0 : (m.data[i] ? -d : d);
    }
  }
  return out;
}

SdmVolume sdm_normalize(const Grid<double>& raw, bool single_scale) {
  SdmVolume out;
  out.values = ImageVolume(raw.shape, raw.spacing, 0.0f);
  for (double r : raw.data) {
    if (r < 0.0) out.max_in = std::max(out.max_in, -r);
    if (r > 0.0) out.max_out = std::max(out.max_out, r);
  }
  const double shared = std::max(out.max_in, out.max_out);
  const double in_scale = single_scale ? shared : out.max_in;
  const double out_scale = single_scale ? shared : out.max_out;
  for (size_t i = 0; i < raw.data.size(); ++i) {
    const double r = raw.data[i];
    double v = 0.0;
    if (r < 0.0 && in_scale > 0.0) v = r / in_scale;
    if (r > 0.0 && out_scale > 0.0) v = r / out_scale;
    out.values.data[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

SdmVolume sdm_compute(const MaskVolume& m, const SdmOptions& opt) {
  return sdm_normalize(signed_distance(m, opt.spacing_aware), opt.single_scale);
}

Volume to_volume(const SdmVolume& s) {
  Volume v{VolumeKind::Sdm, s.values, nlohmann::ordered_json::object()};
  v.aux["max_in"] = s.max_in;
  v.aux["max_out"] = s.max_out;
  return v;
}

}  // namespace fda::sdm
