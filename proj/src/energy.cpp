#include "hwflow/energy.hpp"

#include <cmath>

#include "hwflow/parallel.hpp"

namespace hwflow {

EnergyParams EnergyParams::preset(const std::string& name) {
  EnergyParams p;  // defaults = live
  if (name == "live") {
    return p;
  }
  if (name == "facial") {
    p.w_reg = 0.5;
    p.w_photo = 0.5;
    p.w_grad = 5.0;
    p.w_epi = 0.5;
    p.w_s = 0.75;
    p.w_m = 0.5;
    p.w_d = 0.01;
    p.m_s = 0.5;
    p.m_m = 10.0;
    p.m_d = 100.0;
    return p;
  }
  if (name == "stereo-hq") {
    p.w_reg = 5.0;
    p.w_photo = 1.0;
    p.w_grad = 5.0;
    p.w_epi = 0.5;
    p.w_s = 0.5;
    p.w_m = 1.0;
    p.w_d = 1.0;
    p.m_s = 0.1;
    p.m_m = 10000.0;
    p.m_d = 10000.0;
    return p;
  }
  throw std::invalid_argument("unknown preset: " + name);
}

void EnergyParams::validate() const {
  const double ws[] = {w_reg, w_photo, w_grad, w_epi, w_smooth, w_mag,
                       w_s,   w_m,     w_d,    m_s,   m_m,      m_d};
  for (double w : ws)
    if (!(w >= 0.0)) throw std::invalid_argument("energy weights must be >= 0");
  if (!(eps_huber > 0.0))
    throw std::invalid_argument("eps_huber must be > 0");
}

namespace {

// Field signs of image e = c + 2t: d warp/d (s, m, d).
inline std::array<double, 3> field_signs(int e) {
  const double sc = sign_of(e & 1), st = sign_of(e >> 1);
  return {sc, st, sc * st};
}

}  // namespace

PixelEval eval_pixel(const EnergyContext& ctx, int px, int py, bool with_derivs) {
  const EnergyParams& P = ctx.params;
  const int pix = py * ctx.width + px;
  const Vec2 x(px, py);
  const PixelFlow flow = ctx.total->interpolate(x);

  std::array<double, 4> val;
  std::array<Vec2, 4> dval;
  std::array<Vec2, 4> gval;
  std::array<Mat2, 4> dgval;
  for (int e = 0; e < 4; ++e) {
    const Vec2 w = warp_position(x, flow, e & 1, e >> 1);
    val[e] = ctx.images[e]->sample(w, with_derivs ? &dval[e] : nullptr);
    if (ctx.illum[e]) val[e] += ctx.illum[e]->at(px, py);
    gval[e] = ctx.images[e]->grad(w, with_derivs ? &dgval[e] : nullptr);
  }

  PixelEval out;
  const bool W = ctx.weights->outlier[pix] != 0;
  std::array<double, 4> phi_coef{};  // per-image photo chain coefficients
  std::array<Vec2, 4> grad_coef{};   // per-image gradient-term coefficients
  for (auto& g : grad_coef) g.setZero();

  for (int k = 0; k < 6; ++k) {
    if (!W || !ctx.weights->check_visible(pix, k)) continue;
    const int a = kChecks[k].a, b = kChecks[k].b;
    const double dk = val[a] - val[b];
    out.e_photo += pseudo_huber(dk, P.eps_huber);
    const Vec2 gk = gval[a] - gval[b];
    const double gn2 = gk.squaredNorm();
    out.e_grad += pseudo_huber(gn2, P.eps_huber);
    if (with_derivs) {
      const double dphi = pseudo_huber_deriv(dk, P.eps_huber);
      phi_coef[a] += dphi;
      phi_coef[b] -= dphi;
      const Vec2 q = 2.0 * pseudo_huber_deriv(gn2, P.eps_huber) * gk;
      grad_coef[a] += q;
      grad_coef[b] -= q;
    }
  }

  out.r_photo = std::sqrt(P.w_photo * out.e_photo);
  out.r_grad = std::sqrt(P.w_grad * out.e_grad);

  if (with_derivs) {
    if (out.r_photo > 0.0) {
      Vec6 acc = Vec6::Zero();
      for (int e = 0; e < 4; ++e) {
        if (phi_coef[e] == 0.0) continue;
        const auto sg = field_signs(e);
        const Vec2 c = phi_coef[e] * dval[e];
        for (int f = 0; f < 3; ++f) acc.segment<2>(2 * f) += sg[f] * c;
      }
      out.j_photo = (P.w_photo / (2.0 * out.r_photo)) * acc;
    }
    if (out.r_grad > 0.0) {
      Vec6 acc = Vec6::Zero();
      for (int e = 0; e < 4; ++e) {
        if (grad_coef[e].isZero(0.0)) continue;
        const auto sg = field_signs(e);
        const Vec2 c = dgval[e].transpose() * grad_coef[e];
        for (int f = 0; f < 3; ++f) acc.segment<2>(2 * f) += sg[f] * c;
      }
      out.j_grad = (P.w_grad / (2.0 * out.r_grad)) * acc;
    }
  }
  return out;
}

NodeEval eval_node(const EnergyContext& ctx, int node, bool with_derivs) {
  const EnergyParams& P = ctx.params;
  const WarpGrid& g = *ctx.total;
  const int gw = g.grid_w(), gh = g.grid_h();
  const int a = node % gw, b = node / gw;

  NodeEval out;
  out.right = (a + 1 < gw) ? g.node_index(a + 1, b) : -1;
  out.down = (b + 1 < gh) ? g.node_index(a, b + 1) : -1;

  // Smoothness over forward neighbors, on the accumulated flow.
  const double wi = ctx.weights->node_w[node];
  for (int f = 0; f < 3; ++f) {
    const double wf = P.smooth_weight(f);
    const double w = P.w_smooth * P.w_reg * wi * wf;
    for (int c = 0; c < 2; ++c) {
      const int row = 2 * f + c;
      double dr = 0.0, dd = 0.0, q = 0.0;
      if (out.right >= 0) {
        dr = g.node(f, node)[c] - g.node(f, out.right)[c];
        q += dr * dr;
      }
      if (out.down >= 0) {
        dd = g.node(f, node)[c] - g.node(f, out.down)[c];
        q += dd * dd;
      }
      out.e_smooth += wi * wf * q;
      out.smooth_r[row] = std::sqrt(w * q);
      if (with_derivs && q > 0.0) {
        const double coef = std::sqrt(w) / std::sqrt(q);
        out.smooth_jc[row] = coef * (dr + dd);
        out.smooth_jr[row] = -coef * dr;
        out.smooth_jd[row] = -coef * dd;
      }
    }
  }

  // Epipolar consistency at both time steps, on the accumulated flow.
  if (P.w_epi > 0.0) {
    if (!ctx.fundamental)
      throw std::invalid_argument("epipolar term enabled without a fundamental matrix");
    const Mat3& F = *ctx.fundamental;
    const auto pos = epipolar_positions(g, node);
    const double sw = std::sqrt(P.w_epi * P.w_reg);
    for (int t = 0; t < 2; ++t) {
      const Vec3& l = pos[2 * t];
      const Vec3& r = pos[2 * t + 1];
      const double e = l.dot(F * r);
      out.e_epi += e * e;
      out.epi_r[t] = sw * e;
      if (with_derivs) {
        const Vec2 u = (F * r).head<2>();   // dE/dl
        const Vec2 v = (F.transpose() * l).head<2>();  // dE/dr
        const double st = sign_of(t);
        Vec6 j;
        j.segment<2>(0) = v - u;             // stereo
        j.segment<2>(2) = st * (u + v);      // motion
        j.segment<2>(4) = st * (v - u);      // difference
        out.epi_j[t] = sw * j;
      }
    }
  }

  // Magnitude (Tikhonov) on the current level's delta flow.
  const WarpGrid& dg = *ctx.delta;
  for (int f = 0; f < 3; ++f) {
    const double mf = P.mag_weight(f);
    const double sw = std::sqrt(P.w_mag * P.w_reg * mf);
    out.e_mag += mf * dg.node(f, node).squaredNorm();
    for (int c = 0; c < 2; ++c) {
      out.mag_r[2 * f + c] = sw * dg.node(f, node)[c];
      out.mag_j[2 * f + c] = sw;
    }
  }
  return out;
}

Eigen::VectorXd assemble_residuals(const EnergyContext& ctx) {
  const int N = ctx.pixel_count();
  const int G = ctx.node_count();
  Eigen::VectorXd R(2 * N + 14 * G);

  parallel_for(0, N, ctx.threads, [&](int pix) {
    const PixelEval ev = eval_pixel(ctx, pix % ctx.width, pix / ctx.width, false);
    R(pix) = ev.r_photo;
    R(N + pix) = ev.r_grad;
  });
  parallel_for(0, G, ctx.threads, [&](int k) {
    const NodeEval ev = eval_node(ctx, k, false);
    for (int j = 0; j < 6; ++j) R(2 * N + 6 * k + j) = ev.smooth_r[j];
    for (int t = 0; t < 2; ++t) R(2 * N + 6 * G + 2 * k + t) = ev.epi_r[t];
    for (int j = 0; j < 6; ++j) R(2 * N + 8 * G + 6 * k + j) = ev.mag_r[j];
  });

  if (!R.allFinite())
    throw SolverDivergence("non-finite residuals in energy assembly");
  return R;
}

EnergyBreakdown energy_breakdown(const EnergyContext& ctx) {
  const int N = ctx.pixel_count();
  const int G = ctx.node_count();
  std::vector<double> photo(N), grad(N);
  parallel_for(0, N, ctx.threads, [&](int pix) {
    const PixelEval ev = eval_pixel(ctx, pix % ctx.width, pix / ctx.width, false);
    photo[pix] = ev.e_photo;
    grad[pix] = ev.e_grad;
  });
  EnergyBreakdown sum;
  for (int i = 0; i < N; ++i) {
    sum.photo += photo[i];
    sum.grad += grad[i];
  }
  for (int k = 0; k < G; ++k) {
    const NodeEval ev = eval_node(ctx, k, false);
    sum.smooth += ev.e_smooth;
    sum.epi += ev.e_epi;
    sum.mag += ev.e_mag;
  }
  return sum;
}

void refresh_outlier_bits(const EnergyContext& ctx, PixelWeights& weights) {
  const int N = ctx.pixel_count();
  parallel_for(0, N, ctx.threads, [&](int pix) {
    const Vec2 x(pix % ctx.width, pix / ctx.width);
    const PixelFlow flow = ctx.total->interpolate(x);
    std::array<double, 4> corr{};
    for (int e = 0; e < 4; ++e)
      corr[e] = ctx.illum[e] ? ctx.illum[e]->at(pix % ctx.width, pix / ctx.width) : 0.0;
    const auto d = consistency_residuals(ctx.images, x, flow, corr);
    double sum = 0.0;
    int cnt = 0;
    for (int k = 0; k < 6; ++k) {
      if (!weights.check_visible(pix, k)) continue;
      sum += std::abs(d[k]);
      ++cnt;
    }
    weights.outlier[pix] = (cnt == 0 || sum / cnt < ctx.params.eps_color) ? 1 : 0;
  });
}

void refresh_feature_weights(const EnergyContext& ctx, PixelWeights& weights) {
  Image halfway(ctx.width, ctx.height);
  parallel_for(0, ctx.pixel_count(), ctx.threads, [&](int pix) {
    const int px = pix % ctx.width, py = pix / ctx.width;
    const Vec2 x(px, py);
    const PixelFlow flow = ctx.total->interpolate(x);
    double acc = 0.0;
    for (int e = 0; e < 4; ++e) {
      acc += ctx.images[e]->sample(warp_position(x, flow, e & 1, e >> 1));
      if (ctx.illum[e]) acc += ctx.illum[e]->at(px, py);
    }
    halfway.at(px, py) = 0.25 * acc;
  });
  const WarpGrid& g = *ctx.total;
  for (int k = 0; k < g.node_count(); ++k) {
    const Vec2 anchor = g.node_anchor(k);
    const int cx = std::min(static_cast<int>(anchor.x()), ctx.width - 1);
    const int cy = std::min(static_cast<int>(anchor.y()), ctx.height - 1);
    weights.node_w[k] = structure_weight(halfway, cx, cy);
  }
}

}  // namespace hwflow
