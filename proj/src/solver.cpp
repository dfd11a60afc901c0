#include "hwflow/solver.hpp"

#include <algorithm>
#include <cmath>

#include "hwflow/parallel.hpp"

namespace hwflow {

namespace {

// Forward slots: self plus neighbors that are canonically "after" the
// node in row-major order. Backward slots are filled by mirroring,
// which makes J^T J symmetric exactly, not just up to roundoff.
inline bool forward_offset(int dx, int dy) {
  return dy > 0 || (dy == 0 && dx >= 0);
}

// Pixel column range of grid cell column a0 (cells are clamped, so the
// last cell extends to the image edge).
inline void cell_pixel_range(int a0, int step, int extent, int grid_cells,
                             int* lo, int* hi) {
  *lo = a0 * step;
  *hi = (a0 == grid_cells - 1) ? extent : std::min(extent, (a0 + 1) * step);
}

inline Vec6 mask_fields(Vec6 v, uint8_t active) {
  for (int f = 0; f < 3; ++f)
    if (!(active >> f & 1)) v.segment<2>(2 * f).setZero();
  return v;
}

}  // namespace

NormalSystem::NormalSystem(int grid_w, int grid_h) : gw_(grid_w), gh_(grid_h) {
  blocks_.assign(static_cast<size_t>(node_count()) * 9, Mat6::Zero());
  align_.assign(static_cast<size_t>(node_count()) * 9, Mat6::Zero());
  rhs_ = Eigen::VectorXd::Zero(dim());
}

int NormalSystem::neighbor(int node, int dx, int dy) const {
  const int a = node % gw_ + dx;
  const int b = node / gw_ + dy;
  if (a < 0 || a >= gw_ || b < 0 || b >= gh_) return -1;
  return b * gw_ + a;
}

void NormalSystem::apply(const Eigen::VectorXd& x, Eigen::VectorXd& y,
                         int threads) const {
  y.resize(dim());
  parallel_for(0, node_count(), threads, [&](int n) {
    Vec6 acc = Vec6::Zero();
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int nb = neighbor(n, dx, dy);
        if (nb < 0) continue;
        acc.noalias() += block(n, slot(dx, dy)) * x.segment<6>(6 * nb);
      }
    }
    y.segment<6>(6 * n) = acc;
  });
}

void NormalSystem::build_preconditioner() {
  precond_.assign(static_cast<size_t>(node_count()) * 3, Mat2::Identity());
  for (int n = 0; n < node_count(); ++n) {
    const Mat6& d = block(n, slot(0, 0));
    for (int f = 0; f < 3; ++f) {
      const Mat2 m = d.block<2, 2>(2 * f, 2 * f);
      const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
      if (std::abs(det) > 1e-300) {
        Mat2 inv;
        inv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
        precond_[n * 3 + f] = inv / det;
      }
    }
  }
}

void NormalSystem::precondition(const Eigen::VectorXd& r,
                                Eigen::VectorXd& z) const {
  z.resize(dim());
  for (int n = 0; n < node_count(); ++n)
    for (int f = 0; f < 3; ++f)
      z.segment<2>(6 * n + 2 * f) =
          precond_[n * 3 + f] * r.segment<2>(6 * n + 2 * f);
}

Eigen::MatrixXd NormalSystem::dense() const {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim(), dim());
  for (int n = 0; n < node_count(); ++n)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nb = neighbor(n, dx, dy);
        if (nb >= 0) M.block<6, 6>(6 * n, 6 * nb) = block(n, slot(dx, dy));
      }
  return M;
}

NormalSystem build_normal_system(const EnergyContext& ctx,
                                 const SolveSchedule& sched) {
  const WarpGrid& grid = *ctx.total;
  const int gw = grid.grid_w(), gh = grid.grid_h(), step = grid.step();
  const int N = ctx.pixel_count(), G = grid.node_count();
  const uint8_t active = sched.active_fields;
  NormalSystem sys(gw, gh);

  // Pass 1: per-pixel alignment residuals and flow derivatives.
  struct PixelJac {
    Vec6 jp, jg;
    double rp, rg;
  };
  std::vector<PixelJac> pj(N);
  parallel_for(0, N, sched.threads, [&](int pix) {
    const PixelEval ev = eval_pixel(ctx, pix % ctx.width, pix / ctx.width, true);
    if (!ev.j_photo.allFinite() || !ev.j_grad.allFinite())
      throw SolverDivergence("non-finite Jacobian at pixel residual " +
                             std::to_string(pix));
    pj[pix] = {mask_fields(ev.j_photo, active), mask_fields(ev.j_grad, active),
               ev.r_photo, ev.r_grad};
  });

  // Pass 2: gather the cached alignment J^T J blocks and the alignment
  // part of -J^T r, per node over the pixels of its adjacent cells.
  const int cells_x = gw - 1, cells_y = gh - 1;
  parallel_for(0, G, sched.threads, [&](int n) {
    const int a = n % gw, b = n / gw;
    Vec6 rhs_acc = Vec6::Zero();
    for (int b0 = std::max(0, b - 1); b0 <= std::min(b, cells_y - 1); ++b0) {
      for (int a0 = std::max(0, a - 1); a0 <= std::min(a, cells_x - 1); ++a0) {
        int x_lo, x_hi, y_lo, y_hi;
        cell_pixel_range(a0, step, ctx.width, cells_x, &x_lo, &x_hi);
        cell_pixel_range(b0, step, ctx.height, cells_y, &y_lo, &y_hi);
        const int corner = (a - a0) + 2 * (b - b0);
        for (int py = y_lo; py < y_hi; ++py) {
          for (int px = x_lo; px < x_hi; ++px) {
            const double fu =
                std::clamp(static_cast<double>(px) / step - a0, 0.0, 1.0);
            const double fv =
                std::clamp(static_cast<double>(py) / step - b0, 0.0, 1.0);
            const double alpha[4] = {(1 - fu) * (1 - fv), fu * (1 - fv),
                                     (1 - fu) * fv, fu * fv};
            const double wn = alpha[corner];
            if (wn == 0.0) continue;
            const PixelJac& p = pj[py * ctx.width + px];
            rhs_acc.noalias() -= wn * (p.jp * p.rp + p.jg * p.rg);
            const Mat6 outer = p.jp * p.jp.transpose() + p.jg * p.jg.transpose();
            for (int cj = 0; cj < 4; ++cj) {
              const int da = (a0 + cj % 2) - a;
              const int db = (b0 + cj / 2) - b;
              if (!forward_offset(da, db)) continue;
              sys.align_block(n, NormalSystem::slot(da, db)).noalias() +=
                  (wn * alpha[cj]) * outer;
            }
          }
        }
      }
    }
    sys.rhs().segment<6>(6 * n) = rhs_acc;
  });

  for (size_t i = 0; i < sys.align_.size(); ++i) sys.blocks_[i] = sys.align_[i];

  // Regularizers ride on top of the cached alignment blocks (forward
  // slots only; mirrored below).
  auto add_pair = [&](int ni, int ci, int nj, int cj, double v) {
    const int da = nj % gw - ni % gw, db = nj / gw - ni / gw;
    if (forward_offset(da, db))
      sys.block(ni, NormalSystem::slot(da, db))(ci, cj) += v;
    else
      sys.block(nj, NormalSystem::slot(-da, -db))(cj, ci) += v;
  };
  for (int n = 0; n < G; ++n) {
    const NodeEval ev = eval_node(ctx, n, true);
    for (int row = 0; row < 6; ++row) {
      const int f = row / 2;
      if (!(active >> f & 1)) continue;
      struct {
        int node;
        double coef;
      } sup[3] = {{n, ev.smooth_jc[row]},
                  {ev.right, ev.smooth_jr[row]},
                  {ev.down, ev.smooth_jd[row]}};
      for (const auto& si : sup) {
        if (si.node < 0 || si.coef == 0.0) continue;
        sys.rhs()(6 * si.node + row) -= si.coef * ev.smooth_r[row];
        for (const auto& sj : sup) {
          if (sj.node < 0 || sj.coef == 0.0) continue;
          if (sj.node < si.node) continue;  // ordered pairs once
          if (si.node == sj.node) {
            sys.block(si.node, NormalSystem::slot(0, 0))(row, row) +=
                si.coef * sj.coef;
          } else {
            add_pair(si.node, row, sj.node, row, si.coef * sj.coef);
          }
        }
      }
    }
    for (int t = 0; t < 2; ++t) {
      if (ev.epi_r[t] == 0.0 && ctx.params.w_epi == 0.0) continue;
      const Vec6 j = mask_fields(ev.epi_j[t], active);
      sys.rhs().segment<6>(6 * n).noalias() -= j * ev.epi_r[t];
      sys.block(n, NormalSystem::slot(0, 0)).noalias() += j * j.transpose();
    }
    for (int row = 0; row < 6; ++row) {
      if (!(active >> (row / 2) & 1)) continue;
      sys.rhs()(6 * n + row) -= ev.mag_j[row] * ev.mag_r[row];
      sys.block(n, NormalSystem::slot(0, 0))(row, row) +=
          ev.mag_j[row] * ev.mag_j[row];
    }
  }

  // Inactive fields are pinned: unit diagonal, zero rhs keeps them at
  // a zero update. Optional Levenberg boost on the active diagonal.
  for (int n = 0; n < G; ++n) {
    Mat6& diag = sys.block(n, NormalSystem::slot(0, 0));
    for (int f = 0; f < 3; ++f) {
      if (!(active >> f & 1)) {
        diag.block<2, 2>(2 * f, 2 * f) = Mat2::Identity();
        sys.rhs().segment<2>(6 * n + 2 * f).setZero();
      } else if (sched.lm_lambda > 0.0) {
        for (int c = 0; c < 2; ++c)
          diag(2 * f + c, 2 * f + c) *= 1.0 + sched.lm_lambda;
      }
    }
  }

  // Mirror backward slots.
  parallel_for(0, G, sched.threads, [&](int n) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (forward_offset(dx, dy)) continue;
        const int nb = sys.neighbor(n, dx, dy);
        if (nb < 0) continue;
        sys.block(n, NormalSystem::slot(dx, dy)) =
            sys.block(nb, NormalSystem::slot(-dx, -dy)).transpose();
        sys.align_block(n, NormalSystem::slot(dx, dy)) =
            sys.align_block(nb, NormalSystem::slot(-dx, -dy)).transpose();
      }
    }
  });

  sys.build_preconditioner();
  return sys;
}

JacobianRows assemble_jacobian(const EnergyContext& ctx, uint8_t active_fields,
                               int negate_field) {
  const WarpGrid& grid = *ctx.total;
  const int N = ctx.pixel_count(), G = grid.node_count();
  JacobianRows out;
  out.rows = 2 * N + 14 * G;
  out.cols = 6 * G;
  out.residuals.resize(out.rows);

  auto apply_hooks = [&](Vec6 v) {
    v = mask_fields(v, active_fields);
    if (negate_field >= 0) v.segment<2>(2 * negate_field) *= -1.0;
    return v;
  };

  for (int pix = 0; pix < N; ++pix) {
    const int px = pix % ctx.width, py = pix / ctx.width;
    const PixelEval ev = eval_pixel(ctx, px, py, true);
    out.residuals(pix) = ev.r_photo;
    out.residuals(N + pix) = ev.r_grad;
    const auto sp = grid.support(Vec2(px, py));
    const Vec6 jp = apply_hooks(ev.j_photo);
    const Vec6 jg = apply_hooks(ev.j_grad);
    for (int i = 0; i < 4; ++i) {
      if (sp.weight[i] == 0.0) continue;
      for (int j = 0; j < 6; ++j) {
        const int col = 6 * sp.node[i] + j;
        if (jp(j) != 0.0) out.entries.push_back({pix, col, sp.weight[i] * jp(j)});
        if (jg(j) != 0.0)
          out.entries.push_back({N + pix, col, sp.weight[i] * jg(j)});
      }
    }
  }

  for (int n = 0; n < G; ++n) {
    const NodeEval ev = eval_node(ctx, n, true);
    for (int row = 0; row < 6; ++row) {
      const int r = 2 * N + 6 * n + row;
      out.residuals(r) = ev.smooth_r[row];
      const int f = row / 2;
      if (!(active_fields >> f & 1)) continue;
      const double sgn = (f == negate_field) ? -1.0 : 1.0;
      if (ev.smooth_jc[row] != 0.0)
        out.entries.push_back({r, 6 * n + row, sgn * ev.smooth_jc[row]});
      if (ev.right >= 0 && ev.smooth_jr[row] != 0.0)
        out.entries.push_back({r, 6 * ev.right + row, sgn * ev.smooth_jr[row]});
      if (ev.down >= 0 && ev.smooth_jd[row] != 0.0)
        out.entries.push_back({r, 6 * ev.down + row, sgn * ev.smooth_jd[row]});
    }
    for (int t = 0; t < 2; ++t) {
      const int r = 2 * N + 6 * G + 2 * n + t;
      out.residuals(r) = ev.epi_r[t];
      const Vec6 j = apply_hooks(ev.epi_j[t]);
      for (int c = 0; c < 6; ++c)
        if (j(c) != 0.0) out.entries.push_back({r, 6 * n + c, j(c)});
    }
    for (int row = 0; row < 6; ++row) {
      const int r = 2 * N + 8 * G + 6 * n + row;
      out.residuals(r) = ev.mag_r[row];
      const int f = row / 2;
      if (!(active_fields >> f & 1)) continue;
      const double sgn = (f == negate_field) ? -1.0 : 1.0;
      if (ev.mag_j[row] != 0.0)
        out.entries.push_back({r, 6 * n + row, sgn * ev.mag_j[row]});
    }
  }
  return out;
}

namespace {

// PCG over an abstract SPD operator; serial dot products keep the
// result independent of the thread count.
template <class Apply, class Precond>
Eigen::VectorXd pcg_impl(const Apply& apply, const Precond& precond,
                         const Eigen::VectorXd& b, const Eigen::VectorXd& x0,
                         int iters, std::vector<double>* trace) {
  Eigen::VectorXd x = x0;
  Eigen::VectorXd r = b;
  Eigen::VectorXd tmp(b.size());
  if (!x.isZero(0.0)) {
    apply(x, tmp);
    r -= tmp;
  }
  if (trace) trace->push_back(r.norm());
  Eigen::VectorXd z(b.size());
  precond(r, z);
  double rz = r.dot(z);
  const double rz0 = std::abs(rz);
  if (rz0 == 0.0) {
    if (trace)
      for (int it = 0; it < iters; ++it) trace->push_back(0.0);
    return x;
  }
  Eigen::VectorXd p = z;
  for (int it = 0; it < iters; ++it) {
    apply(p, tmp);
    const double pAp = p.dot(tmp);
    if (pAp <= 0.0)
      throw SolverDivergence("PCG: non-positive curvature, system not SPD");
    const double alpha = rz / pAp;
    x += alpha * p;
    r -= alpha * tmp;
    if (trace) trace->push_back(r.norm());
    precond(r, z);
    const double rz_new = r.dot(z);
    if (std::abs(rz_new) > 100.0 * rz0)
      throw SolverDivergence(
          "PCG: preconditioned residual grew by more than 10x");
    const double beta = rz_new / rz;
    rz = rz_new;
    p = z + beta * p;
  }
  return x;
}

}  // namespace

Eigen::VectorXd pcg_solve(const NormalSystem& sys, int iters, int threads,
                          std::vector<double>* trace) {
  return pcg_solve(sys, sys.rhs(), iters, threads, trace);
}

Eigen::VectorXd pcg_solve(const NormalSystem& sys, const Eigen::VectorXd& rhs,
                          int iters, int threads, std::vector<double>* trace) {
  return pcg_impl(
      [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) {
        sys.apply(x, y, threads);
      },
      [&](const Eigen::VectorXd& r, Eigen::VectorXd& z) {
        sys.precondition(r, z);
      },
      rhs, Eigen::VectorXd::Zero(sys.dim()), iters, trace);
}

std::vector<Subdomain> build_subdomains(int grid_w, int grid_h, int step,
                                        int tile_px, int boundary_px) {
  if (tile_px <= 0) throw std::invalid_argument("subdomain tile must be > 0");
  const int ext_x = (grid_w - 1) * step;  // grid extent in pixels
  const int ext_y = (grid_h - 1) * step;
  const int tiles_x = ext_x / tile_px + 1;
  const int tiles_y = ext_y / tile_px + 1;
  std::vector<Subdomain> out(static_cast<size_t>(tiles_x) * tiles_y);
  for (int b = 0; b < grid_h; ++b) {
    for (int a = 0; a < grid_w; ++a) {
      const int px = a * step, py = b * step;
      const int tx = px / tile_px, ty = py / tile_px;
      out[ty * tiles_x + tx].interior.push_back(b * grid_w + a);
      // Ring membership of the adjacent tiles (boundary_px < tile_px,
      // so only direct neighbors can reach this node).
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = tx + dx, ny = ty + dy;
          if (nx < 0 || nx >= tiles_x || ny < 0 || ny >= tiles_y) continue;
          const int x0 = nx * tile_px, y0 = ny * tile_px;
          if (px >= x0 - boundary_px && px < x0 + tile_px + boundary_px &&
              py >= y0 - boundary_px && py < y0 + tile_px + boundary_px)
            out[ny * tiles_x + nx].boundary.push_back(b * grid_w + a);
        }
      }
    }
  }
  std::erase_if(out, [](const Subdomain& s) { return s.interior.empty(); });
  return out;
}

Eigen::VectorXd schwarz_iterate(const NormalSystem& sys,
                                const std::vector<Subdomain>& subdomains,
                                int patch_iters, int pcg_iters, int threads) {
  const int dim = sys.dim();
  Eigen::VectorXd published = Eigen::VectorXd::Zero(dim);

  // Since interiors partition the node set, ownership and local index
  // can be prebuilt globally.
  std::vector<int> global_to_local(sys.node_count());
  std::vector<int> owner(sys.node_count(), -1);
  for (size_t s = 0; s < subdomains.size(); ++s) {
    for (size_t i = 0; i < subdomains[s].interior.size(); ++i) {
      owner[subdomains[s].interior[i]] = static_cast<int>(s);
      global_to_local[subdomains[s].interior[i]] = static_cast<int>(i);
    }
  }

  for (int sweep = 0; sweep < patch_iters; ++sweep) {
    Eigen::VectorXd next = published;
    parallel_for(0, static_cast<int>(subdomains.size()), threads, [&](int s) {
      const auto& interior = subdomains[s].interior;
      const int ln = static_cast<int>(interior.size());
      Eigen::VectorXd b(6 * ln), x0(6 * ln);
      for (int i = 0; i < ln; ++i) {
        const int g = interior[i];
        Vec6 bi = sys.rhs().segment<6>(6 * g);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const int nb = sys.neighbor(g, dx, dy);
            if (nb < 0 || owner[nb] == s) continue;
            bi.noalias() -= sys.block(g, NormalSystem::slot(dx, dy)) *
                            published.segment<6>(6 * nb);
          }
        }
        b.segment<6>(6 * i) = bi;
        x0.segment<6>(6 * i) = published.segment<6>(6 * g);
      }
      auto apply = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) {
        y.resize(6 * ln);
        for (int i = 0; i < ln; ++i) {
          const int g = interior[i];
          Vec6 acc = Vec6::Zero();
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int nb = sys.neighbor(g, dx, dy);
              if (nb < 0 || owner[nb] != s) continue;
              acc.noalias() += sys.block(g, NormalSystem::slot(dx, dy)) *
                               x.segment<6>(6 * global_to_local[nb]);
            }
          }
          y.segment<6>(6 * i) = acc;
        }
      };
      auto precond = [&](const Eigen::VectorXd& r, Eigen::VectorXd& z) {
        z.resize(6 * ln);
        for (int i = 0; i < ln; ++i)
          for (int f = 0; f < 3; ++f)
            z.segment<2>(6 * i + 2 * f) =
                sys.precond_block(interior[i], f) * r.segment<2>(6 * i + 2 * f);
      };
      const Eigen::VectorXd xl = pcg_impl(apply, precond, b, x0, pcg_iters, nullptr);
      for (int i = 0; i < ln; ++i)
        next.segment<6>(6 * interior[i]) = xl.segment<6>(6 * i);
    });
    published = next;
  }
  return published;
}

GnStats gauss_newton(EnergyContext& ctx, const WarpGrid& base, WarpGrid& delta,
                     PixelWeights& weights, const SolveSchedule& sched,
                     int gn_iters) {
  GnStats stats;
  std::vector<Subdomain> subdomains;
  if (sched.subdomain_px > 0)
    subdomains = build_subdomains(base.grid_w(), base.grid_h(), base.step(),
                                  sched.subdomain_px, sched.boundary_px);

  for (int it = 0; it < gn_iters; ++it) {
    WarpGrid total = base.plus(delta);
    ctx.total = &total;
    ctx.delta = &delta;
    ctx.weights = &weights;
    refresh_outlier_bits(ctx, weights);
    refresh_feature_weights(ctx, weights);

    const double e_before = assemble_residuals(ctx).squaredNorm();
    stats.energy_before.push_back(e_before);

    const NormalSystem sys = build_normal_system(ctx, sched);
    Eigen::VectorXd step;
    if (sched.subdomain_px > 0) {
      step = schwarz_iterate(sys, subdomains, sched.patch_iters,
                             sched.pcg_iters, sched.threads);
    } else {
      std::vector<double> trace;
      step = pcg_solve(sys, sched.pcg_iters, sched.threads,
                       sched.pcg_trace ? &trace : nullptr);
      if (sched.pcg_trace) sched.pcg_trace->push_back(std::move(trace));
    }
    if (!step.allFinite())
      throw SolverDivergence("non-finite Gauss-Newton update");

    for (int n = 0; n < delta.node_count(); ++n)
      for (int f = 0; f < 3; ++f)
        if (sched.active_fields >> f & 1)
          delta.node(f, n) += step.segment<2>(6 * n + 2 * f);

    WarpGrid total_after = base.plus(delta);
    ctx.total = &total_after;
    const double e_after = assemble_residuals(ctx).squaredNorm();
    if (!std::isfinite(e_after))
      throw SolverDivergence("non-finite energy after Gauss-Newton step");
    stats.energy_after.push_back(e_after);
    ctx.total = nullptr;  // points at a local; callers must not reuse
  }
  return stats;
}

}  // namespace hwflow
