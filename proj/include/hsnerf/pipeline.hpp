// Hierarchical render engine shared by the trainer and the gradient-check
// oracles: one coarse pass, PDF resampling, one fine pass over all samples,
// compositing, and reverse-mode backprop into both networks.
//
// Every random draw is keyed by (seed, image id, pixel, iteration, pass), so
// a group renders identically for any chunking, thread count, or density
// mode. A GroupPlan records the drawn sample positions and can replay them,
// which is how finite-difference checks keep the loss a fixed function of
// the parameters. The PDF resampling path carries no gradient: fine sample
// positions are constants once drawn.
#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "hsnerf/composite.hpp"
#include "hsnerf/field.hpp"
#include "hsnerf/losses.hpp"
#include "hsnerf/nn.hpp"
#include "hsnerf/rays.hpp"
#include "hsnerf/rng.hpp"
#include "hsnerf/sampling.hpp"

namespace hsnerf::pipeline {

struct RenderSettings {
  int n_coarse = 64;
  int n_fine = 196;
  bool anneal = false;
  int64_t anneal_iters = 2000;
  double anneal_p_s = 0.85;
  render::DepthMode depth_mode = render::kDefaultDepthMode;
};

// Recorded sample distances, one entry per ray.
struct GroupPlan {
  std::vector<VecD> coarse_t;
  std::vector<VecD> all_t;  // merged coarse+fine, strictly increasing
  bool filled = false;
};

template <class S>
struct GroupRender {
  Mat<S> coarse_color;  // rays x channels (standardized space)
  Mat<S> fine_color;    // rays x channels
  Vec<S> mean_depth;    // rays
};

template <class S>
struct GroupCotangents {
  Mat<S> d_coarse;
  Mat<S> d_fine;
  Vec<S> d_depth;
};

// Reusable buffers; callers keep one per work slot so steady-state training
// does no allocation.
template <class S>
struct Workspace {
  Mat<S> pos, dirs;
  field::FieldOutputBatch<S> out_c, out_f;
  field::FieldCache<S> cache_c, cache_f;
  std::vector<render::RayComposite<S>> comp_c, comp_f;
  Mat<S> dsig_all, drad_all;
  GroupCotangents<S> cot;
};

namespace detail {

inline uint64_t ray_stream_key(uint64_t seed, const render::Ray& ray,
                               int64_t iteration, uint64_t pass) {
  return rng::key({seed, uint64_t(ray.image_id), uint64_t(ray.row),
                   uint64_t(ray.col), uint64_t(iteration), pass});
}

template <class S>
void fill_points(const std::vector<render::Ray>& rays,
                 const std::vector<VecD>& t_per_ray, Mat<S>& pos, Mat<S>& dirs) {
  Eigen::Index total = 0;
  for (const auto& t : t_per_ray) total += t.size();
  pos.resize(total, 3);
  dirs.resize(total, 3);
  Eigen::Index row = 0;
  for (size_t r = 0; r < rays.size(); ++r) {
    const auto& ray = rays[r];
    const auto& t = t_per_ray[r];
    for (Eigen::Index i = 0; i < t.size(); ++i, ++row) {
      const Vec3 p = ray.origin + t(i) * ray.dir;
      pos(row, 0) = S(p.x());
      pos(row, 1) = S(p.y());
      pos(row, 2) = S(p.z());
      dirs(row, 0) = S(ray.dir.x());
      dirs(row, 1) = S(ray.dir.y());
      dirs(row, 2) = S(ray.dir.z());
    }
  }
}

}  // namespace detail

// Renders one group of rays through the coarse and fine networks.
//
// plan: if filled, sample positions are replayed from it; otherwise they are
//   drawn and (when plan is non-null) recorded.
// density_only: skip radiance heads (geometry-regularization patches render
//   depth alone).
// loss_backward: invoked with the rendered group to fill cotangents; when
//   present, grads_coarse/grads_fine receive parameter gradients.
template <class S>
void process_group(
    const nn::ParamStore<S>& coarse_params, const nn::ParamStore<S>& fine_params,
    const field::FieldConfig& cfg, const RenderSettings& rs,
    const std::vector<render::Ray>& rays, int64_t iteration,
    uint64_t sample_seed, bool density_only, GroupPlan* plan,
    GroupRender<S>& out, Workspace<S>& ws,
    const std::function<void(const GroupRender<S>&, GroupCotangents<S>&)>*
        loss_backward = nullptr,
    nn::GradBuffer<S>* grads_coarse = nullptr,
    nn::GradBuffer<S>* grads_fine = nullptr) {
  const int B = int(rays.size());
  const int c = cfg.channels;
  const int dd = cfg.density_dim();
  const bool use_plan = plan && plan->filled;
  const bool want_grads = loss_backward != nullptr;
  const bool coarse_grads = want_grads && !density_only;

  GroupPlan local_plan;
  GroupPlan& pl = plan ? *plan : local_plan;

  // Effective planes (annealed while the schedule is active). The annealed
  // far plane also caps the last sample interval.
  std::vector<double> tn_eff(static_cast<size_t>(B));
  std::vector<double> tf_eff(static_cast<size_t>(B));
  for (int r = 0; r < B; ++r) {
    const auto& ray = rays[size_t(r)];
    if (rs.anneal) {
      auto planes = render::anneal_planes(iteration, ray.t_near, ray.t_far,
                                          rs.anneal_iters, rs.anneal_p_s);
      tn_eff[size_t(r)] = planes.first;
      tf_eff[size_t(r)] = planes.second;
    } else {
      tn_eff[size_t(r)] = ray.t_near;
      tf_eff[size_t(r)] = ray.t_far;
    }
  }

  // Coarse pass.
  if (!use_plan) {
    pl.coarse_t.assign(size_t(B), VecD());
    pl.all_t.assign(size_t(B), VecD());
    for (int r = 0; r < B; ++r) {
      rng::Stream rnd(detail::ray_stream_key(sample_seed, rays[size_t(r)],
                                             iteration, 0xC0));
      pl.coarse_t[size_t(r)] = render::stratified_samples(
          tn_eff[size_t(r)], tf_eff[size_t(r)], rs.n_coarse, rnd);
    }
  }
  detail::fill_points(rays, pl.coarse_t, ws.pos, ws.dirs);
  field::field_forward(coarse_params, cfg, ws.pos, ws.dirs, ws.out_c,
                       coarse_grads ? &ws.cache_c : nullptr, density_only);

  ws.comp_c.resize(size_t(B));
  out.coarse_color.setZero(B, density_only ? 0 : c);
  {
    Eigen::Index row = 0;
    for (int r = 0; r < B; ++r) {
      const auto& t = pl.coarse_t[size_t(r)];
      const Eigen::Index n = t.size();
      render::composite_forward<S>(t, tf_eff[size_t(r)],
                                   ws.out_c.sigma.middleRows(row, n),
                                   ws.out_c.radiance.middleRows(row, n),
                                   ws.comp_c[size_t(r)], rs.depth_mode);
      if (!density_only)
        out.coarse_color.row(r) = ws.comp_c[size_t(r)].color.transpose();
      row += n;
    }
  }

  // Fine sample positions from the combined coarse weights.
  if (!use_plan) {
    for (int r = 0; r < B; ++r) {
      rng::Stream rnd(detail::ray_stream_key(sample_seed, rays[size_t(r)],
                                             iteration, 0xF1));
      VecD w = ws.comp_c[size_t(r)].w_combined.template cast<double>();
      VecD fine = render::pdf_resample(w, tn_eff[size_t(r)], tf_eff[size_t(r)],
                                       rs.n_fine, rnd, /*warn=*/false);
      std::sort(fine.data(), fine.data() + fine.size());
      pl.all_t[size_t(r)] = render::merge_sorted(pl.coarse_t[size_t(r)], fine);
    }
    pl.filled = true;
  }

  // Fine pass over all N = n_coarse + n_fine samples.
  detail::fill_points(rays, pl.all_t, ws.pos, ws.dirs);
  field::field_forward(fine_params, cfg, ws.pos, ws.dirs, ws.out_f,
                       want_grads ? &ws.cache_f : nullptr, density_only);

  ws.comp_f.resize(size_t(B));
  out.fine_color.setZero(B, density_only ? 0 : c);
  out.mean_depth.setZero(B);
  {
    Eigen::Index row = 0;
    for (int r = 0; r < B; ++r) {
      const auto& t = pl.all_t[size_t(r)];
      const Eigen::Index n = t.size();
      render::composite_forward<S>(t, tf_eff[size_t(r)],
                                   ws.out_f.sigma.middleRows(row, n),
                                   ws.out_f.radiance.middleRows(row, n),
                                   ws.comp_f[size_t(r)], rs.depth_mode);
      if (!density_only)
        out.fine_color.row(r) = ws.comp_f[size_t(r)].color.transpose();
      out.mean_depth(r) = ws.comp_f[size_t(r)].mean_depth;
      row += n;
    }
  }

  if (!want_grads) return;

  ws.cot.d_coarse.setZero(B, density_only ? 0 : c);
  ws.cot.d_fine.setZero(B, density_only ? 0 : c);
  ws.cot.d_depth.setZero(B);
  (*loss_backward)(out, ws.cot);

  // Fine backward.
  {
    ws.dsig_all.resize(ws.out_f.sigma.rows(), dd);
    ws.drad_all.resize(ws.out_f.sigma.rows(), density_only ? 0 : c);
    Eigen::Index row = 0;
    Vec<S> dcolor(density_only ? 0 : c);
    for (int r = 0; r < B; ++r) {
      const auto& t = pl.all_t[size_t(r)];
      const Eigen::Index n = t.size();
      if (!density_only) dcolor = ws.cot.d_fine.row(r).transpose();
      render::composite_backward<S>(
          t, ws.out_f.sigma.middleRows(row, n),
          ws.out_f.radiance.middleRows(row, n), ws.comp_f[size_t(r)], dcolor,
          ws.cot.d_depth(r), ws.dsig_all.middleRows(row, n),
          ws.drad_all.middleRows(row, n), rs.depth_mode);
      row += n;
    }
    field::field_backward(fine_params, cfg, ws.cache_f, ws.dsig_all,
                          ws.drad_all, *grads_fine);
  }

  // Coarse backward (supervised groups only; fine sample positions are
  // constants, so the coarse net sees only the coarse L2 term).
  if (coarse_grads) {
    ws.dsig_all.resize(ws.out_c.sigma.rows(), dd);
    ws.drad_all.resize(ws.out_c.sigma.rows(), c);
    Eigen::Index row = 0;
    Vec<S> dcolor(c);
    for (int r = 0; r < B; ++r) {
      const auto& t = pl.coarse_t[size_t(r)];
      const Eigen::Index n = t.size();
      dcolor = ws.cot.d_coarse.row(r).transpose();
      render::composite_backward<S>(
          t, ws.out_c.sigma.middleRows(row, n),
          ws.out_c.radiance.middleRows(row, n), ws.comp_c[size_t(r)], dcolor,
          S(0), ws.dsig_all.middleRows(row, n), ws.drad_all.middleRows(row, n),
          rs.depth_mode);
      row += n;
    }
    field::field_backward(coarse_params, cfg, ws.cache_c, ws.dsig_all,
                          ws.drad_all, *grads_coarse);
  }
}

}  // namespace hsnerf::pipeline
