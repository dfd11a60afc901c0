#include "hwflow/warp_grid.hpp"

#include <algorithm>
#include <cmath>

namespace hwflow {

WarpGrid::WarpGrid(int image_w, int image_h, int step) {
  if (image_w < 1 || image_h < 1 || step < 1)
    throw std::invalid_argument("WarpGrid: bad dimensions or step");
  gw_ = (image_w - 1 + step - 1) / step + 1;
  gh_ = (image_h - 1 + step - 1) / step + 1;
  gw_ = std::max(gw_, 2);
  gh_ = std::max(gh_, 2);
  step_ = step;
  for (auto& f : fields_) f.assign(static_cast<size_t>(gw_) * gh_, Vec2::Zero());
}

WarpGrid WarpGrid::with_dims(int grid_w, int grid_h, int step) {
  if (grid_w < 2 || grid_h < 2 || step < 1)
    throw std::invalid_argument("WarpGrid: bad grid dims");
  WarpGrid g;
  g.gw_ = grid_w;
  g.gh_ = grid_h;
  g.step_ = step;
  for (auto& f : g.fields_)
    f.assign(static_cast<size_t>(grid_w) * grid_h, Vec2::Zero());
  return g;
}

void WarpGrid::set_zero() {
  for (auto& f : fields_) std::fill(f.begin(), f.end(), Vec2::Zero());
}

bool WarpGrid::covers(const Vec2& x) const {
  return x.x() >= 0.0 && x.y() >= 0.0 &&
         x.x() <= static_cast<double>(gw_ - 1) * step_ &&
         x.y() <= static_cast<double>(gh_ - 1) * step_;
}

WarpGrid::Support WarpGrid::support(const Vec2& x) const {
  if (!covers(x)) throw std::out_of_range("WarpGrid: position outside lattice");
  const double u = x.x() / step_;
  const double v = x.y() / step_;
  const int a0 = std::clamp(static_cast<int>(std::floor(u)), 0, gw_ - 2);
  const int b0 = std::clamp(static_cast<int>(std::floor(v)), 0, gh_ - 2);
  const double fu = std::clamp(u - a0, 0.0, 1.0);
  const double fv = std::clamp(v - b0, 0.0, 1.0);
  Support s;
  s.node = {node_index(a0, b0), node_index(a0 + 1, b0),
            node_index(a0, b0 + 1), node_index(a0 + 1, b0 + 1)};
  s.weight = {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
  return s;
}

PixelFlow WarpGrid::interpolate(const Vec2& x) const {
  const Support sp = support(x);
  PixelFlow out;
  for (int f = 0; f < 3; ++f) {
    Vec2 acc = Vec2::Zero();
    for (int i = 0; i < 4; ++i) acc += sp.weight[i] * fields_[f][sp.node[i]];
    out.field(f) = acc;
  }
  return out;
}

WarpGrid WarpGrid::plus(const WarpGrid& other) const {
  if (gw_ != other.gw_ || gh_ != other.gh_ || step_ != other.step_)
    throw std::invalid_argument("WarpGrid::plus: dimension mismatch");
  WarpGrid out = *this;
  for (int f = 0; f < 3; ++f)
    for (size_t k = 0; k < out.fields_[f].size(); ++k)
      out.fields_[f][k] += other.fields_[f][k];
  return out;
}

std::array<double, 6> consistency_residuals(
    const std::array<const Image*, 4>& images, const Vec2& x, const PixelFlow& f,
    const std::array<double, 4>& corrections, std::array<Vec2, 6>* grads) {
  std::array<double, 4> val;
  std::array<Vec2, 4> grad;
  for (int e = 0; e < 4; ++e) {
    const Vec2 w = warp_position(x, f, e & 1, e >> 1);
    val[e] = images[e]->sample(w) + corrections[e];
    if (grads) grad[e] = images[e]->grad(w);
  }
  std::array<double, 6> d;
  for (int k = 0; k < 6; ++k) {
    d[k] = val[kChecks[k].a] - val[kChecks[k].b];
    if (grads) (*grads)[k] = grad[kChecks[k].a] - grad[kChecks[k].b];
  }
  return d;
}

std::array<Vec3, 4> epipolar_positions(const WarpGrid& grid, int node) {
  if (node < 0 || node >= grid.node_count())
    throw std::out_of_range("epipolar_positions: bad node index");
  const Vec2 gx = grid.node_anchor(node);
  const Vec2& s = grid.node(kStereo, node);
  const Vec2& m = grid.node(kMotion, node);
  const Vec2& d = grid.node(kDifference, node);
  std::array<Vec3, 4> out;  // l0, r0, l1, r1
  const Vec2 l0 = gx - s - m + d;
  const Vec2 r0 = gx + s - m - d;
  const Vec2 l1 = gx - s + m - d;
  const Vec2 r1 = gx + s + m + d;
  out[0] << l0.x(), l0.y(), 1.0;
  out[1] << r0.x(), r0.y(), 1.0;
  out[2] << l1.x(), l1.y(), 1.0;
  out[3] << r1.x(), r1.y(), 1.0;
  return out;
}

}  // namespace hwflow
