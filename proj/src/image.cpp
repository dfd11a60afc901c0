#include "hwflow/image.hpp"

#include <algorithm>
#include <cmath>

namespace hwflow {

namespace {

// Cell setup shared by sample() and grad(): integer corner, fractional
// offset, and whether the coordinate is clamped at a border (where the
// interpolant is constant, so its derivative vanishes).
struct CellCoord {
  int i0;
  double f;
  bool clamped;
};

CellCoord cell_coord(double v, int n) {
  CellCoord c;
  if (v <= 0.0) {
    c = {0, 0.0, true};
  } else if (v >= n - 1) {
    c = {n >= 2 ? n - 2 : 0, 1.0, true};
  } else {
    double fl = std::floor(v);
    c = {static_cast<int>(fl), v - fl, false};
  }
  if (n == 1) c = {0, 0.0, true};
  return c;
}

}  // namespace

double Image::sample(const Vec2& p) const { return sample(p, nullptr); }

double Image::sample(const Vec2& p, Vec2* dval_dp) const {
  const CellCoord cx = cell_coord(p.x(), w_);
  const CellCoord cy = cell_coord(p.y(), h_);
  const int x1 = std::min(cx.i0 + 1, w_ - 1);
  const int y1 = std::min(cy.i0 + 1, h_ - 1);
  const double v00 = at(cx.i0, cy.i0), v10 = at(x1, cy.i0);
  const double v01 = at(cx.i0, y1), v11 = at(x1, y1);
  const double fx = cx.f, fy = cy.f;
  const double v = (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 +
                   (1 - fx) * fy * v01 + fx * fy * v11;
  if (dval_dp) {
    const double dx = (1 - fy) * (v10 - v00) + fy * (v11 - v01);
    const double dy = (1 - fx) * (v01 - v00) + fx * (v11 - v10);
    (*dval_dp)(0) = cx.clamped ? 0.0 : dx;
    (*dval_dp)(1) = cy.clamped ? 0.0 : dy;
  }
  return v;
}

Vec2 Image::pixel_grad(int x, int y) const {
  double gx, gy;
  if (w_ == 1) {
    gx = 0.0;
  } else if (x == 0) {
    gx = at(1, y) - at(0, y);
  } else if (x == w_ - 1) {
    gx = at(w_ - 1, y) - at(w_ - 2, y);
  } else {
    gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
  }
  if (h_ == 1) {
    gy = 0.0;
  } else if (y == 0) {
    gy = at(x, 1) - at(x, 0);
  } else if (y == h_ - 1) {
    gy = at(x, h_ - 1) - at(x, h_ - 2);
  } else {
    gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
  }
  return {gx, gy};
}

Vec2 Image::grad(const Vec2& p) const { return grad(p, nullptr); }

Vec2 Image::grad(const Vec2& p, Mat2* dgrad_dp) const {
  const CellCoord cx = cell_coord(p.x(), w_);
  const CellCoord cy = cell_coord(p.y(), h_);
  const int x1 = std::min(cx.i0 + 1, w_ - 1);
  const int y1 = std::min(cy.i0 + 1, h_ - 1);
  const Vec2 g00 = pixel_grad(cx.i0, cy.i0), g10 = pixel_grad(x1, cy.i0);
  const Vec2 g01 = pixel_grad(cx.i0, y1), g11 = pixel_grad(x1, y1);
  const double fx = cx.f, fy = cy.f;
  const Vec2 g = (1 - fx) * (1 - fy) * g00 + fx * (1 - fy) * g10 +
                 (1 - fx) * fy * g01 + fx * fy * g11;
  if (dgrad_dp) {
    const Vec2 dgx = (1 - fy) * (g10 - g00) + fy * (g11 - g01);
    const Vec2 dgy = (1 - fx) * (g01 - g00) + fx * (g11 - g10);
    dgrad_dp->col(0) = cx.clamped ? Vec2::Zero() : dgx;
    dgrad_dp->col(1) = cy.clamped ? Vec2::Zero() : dgy;
  }
  return g;
}

Image downsample_mipmap(const Image& img) {
  if (img.empty()) throw std::invalid_argument("downsample of empty image");
  const int ow = (img.width() + 1) / 2;
  const int oh = (img.height() + 1) / 2;
  Image out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double sum = 0.0;
      int cnt = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx, sy = 2 * y + dy;
          if (sx < img.width() && sy < img.height()) {
            sum += img.at(sx, sy);
            ++cnt;
          }
        }
      }
      out.at(x, y) = sum / cnt;
    }
  }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) throw std::invalid_argument("gaussian_blur: sigma must be > 0");
  if (img.empty()) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  Image tmp(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * img.at_clamped(x + i, y);
      tmp.at(x, y) = acc;
    }
  }
  Image out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * tmp.at_clamped(x, y + i);
      out.at(x, y) = acc;
    }
  }
  return out;
}

double structure_weight(const Image& img, int cx, int cy,
                        double delta, double w_max) {
  double a = 0.0, b = 0.0, c = 0.0;  // [a b; b c]
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int x = std::clamp(cx + dx, 0, img.width() - 1);
      const int y = std::clamp(cy + dy, 0, img.height() - 1);
      const Vec2 g = img.pixel_grad(x, y);
      a += g.x() * g.x();
      b += g.x() * g.y();
      c += g.y() * g.y();
    }
  }
  const double tr = a + c;
  const double det_disc = std::sqrt(std::max(0.0, 0.25 * (a - c) * (a - c) + b * b));
  const double lambda_min = 0.5 * tr - det_disc;
  const double w = 1.0 / (std::max(lambda_min, 0.0) + delta);
  return std::clamp(w, 1.0, w_max);
}

Pyramid build_pyramid(const Image& img, int num_levels) {
  if (num_levels < 1) throw std::invalid_argument("pyramid needs >= 1 level");
  Pyramid pyr;
  pyr.levels.reserve(num_levels);
  pyr.levels.push_back(img);
  for (int l = 1; l < num_levels; ++l)
    pyr.levels.push_back(downsample_mipmap(pyr.levels.back()));
  return pyr;
}

}  // namespace hwflow
