// The neural scene function: a base MLP over encoded positions producing
// volume density (one value, or one per spectral channel) plus a feature
// vector, and a head MLP over features + encoded view direction producing
// linear radiance outputs in standardized units.
#pragma once

#include <string>
#include <vector>

#include "hsnerf/common.hpp"
#include "hsnerf/encoding.hpp"
#include "hsnerf/nn.hpp"
#include "hsnerf/rng.hpp"

namespace hsnerf::field {

enum class DensityMode { kSingle, kPerChannel };

struct FieldConfig {
  int base_depth = 8;
  int base_width = 256;
  int head_depth = 2;
  int head_width = 128;
  int L_pos = 16;
  int L_dir = 4;
  int channels = 8;
  DensityMode density_mode = DensityMode::kSingle;
  int skip_layer = 4;  // encoded position re-concatenated at this base layer's input
  double scene_radius = 1.0;

  int density_dim() const {
    return density_mode == DensityMode::kPerChannel ? channels : 1;
  }
  int pos_dim() const { return encoded_dim(L_pos); }
  int dir_dim() const { return encoded_dim(L_dir); }

  void validate() const {
    check_config(channels >= 1, "field: channels must be >= 1");
    check_config(L_pos >= 1 && L_dir >= 1, "field: L_pos and L_dir must be >= 1");
    check_config(base_depth >= 1 && head_depth >= 1, "field: depths must be >= 1");
    check_config(base_width >= 1 && head_width >= 1, "field: widths must be >= 1");
    check_config(skip_layer >= 0 && skip_layer < base_depth,
                 "field: skip_layer out of range");
    check_config(scene_radius > 0, "field: scene_radius must be positive");
  }
};

inline std::string base_layer_name(int i) { return "base" + std::to_string(i); }
inline std::string head_layer_name(int i) { return "head" + std::to_string(i); }

// Layer dimensions implied by the config, in ParamStore order:
// base0..base{D-1}, sigma, feat, head0..head{H-1}, rad.
template <class S>
nn::ParamStore<S> make_field_params(const FieldConfig& cfg) {
  cfg.validate();
  nn::ParamStore<S> p;
  int in = cfg.pos_dim();
  for (int i = 0; i < cfg.base_depth; ++i) {
    int layer_in = (i == cfg.skip_layer && i > 0) ? cfg.base_width + cfg.pos_dim() : in;
    p.add(base_layer_name(i), cfg.base_width, layer_in);
    in = cfg.base_width;
  }
  p.add("sigma", cfg.density_dim(), cfg.base_width);
  p.add("feat", cfg.head_width, cfg.base_width);
  for (int i = 0; i < cfg.head_depth; ++i) {
    int layer_in = (i == 0) ? cfg.head_width + cfg.dir_dim() : cfg.head_width;
    p.add(head_layer_name(i), cfg.head_width, layer_in);
  }
  p.add("rad", cfg.channels, cfg.head_width);
  return p;
}

// Glorot-uniform weights, zero biases. Each weight is drawn from a stream
// keyed by (seed, entry index, element index), so initialization is identical
// across scalar types and thread counts.
template <class S>
void init_field_params(nn::ParamStore<S>& p, uint64_t seed) {
  for (size_t e = 0; e < p.entries.size(); ++e) {
    auto& W = p.entries[e].W;
    const double bound = std::sqrt(6.0 / double(W.rows() + W.cols()));
    for (Eigen::Index r = 0; r < W.rows(); ++r)
      for (Eigen::Index c = 0; c < W.cols(); ++c) {
        uint64_t u =
            rng::mix(rng::key({seed, uint64_t(e), uint64_t(r), uint64_t(c)}));
        double v = (double(u >> 11) * 0x1.0p-53) * 2.0 - 1.0;
        W(r, c) = S(v * bound);
      }
    p.entries[e].b.setZero();
  }
}

template <class S>
nn::ParamStore<S> init_field(const FieldConfig& cfg, uint64_t seed) {
  auto p = make_field_params<S>(cfg);
  init_field_params(p, seed);
  return p;
}

// Activations retained by the forward pass for backprop.
template <class S>
struct FieldCache {
  Mat<S> enc_pos, enc_dir;
  std::vector<Mat<S>> base_in;    // input to each base layer
  std::vector<Mat<S>> base_post;  // post-ReLU output of each base layer
  Mat<S> sigma_pre;               // density logits
  Mat<S> feat;                    // feature vector (linear)
  std::vector<Mat<S>> head_in, head_post;
  bool density_only = false;
  bool valid = false;
};

template <class S>
struct FieldOutputBatch {
  Mat<S> sigma;     // n x density_dim, softplus-activated (>= 0)
  Mat<S> radiance;  // n x channels, linear (standardized units)
};

// Evaluates the field at n points. positions are world-space (n x 3) and are
// normalized by cfg.scene_radius before encoding; dirs (n x 3) must be unit.
// density_only skips the radiance head (the geometry-regularization path
// needs densities alone). cache may be null for inference.
template <class S>
void field_forward(const nn::ParamStore<S>& p, const FieldConfig& cfg,
                   const Mat<S>& positions, const Mat<S>& dirs,
                   FieldOutputBatch<S>& out, FieldCache<S>* cache,
                   bool density_only = false) {
  const Eigen::Index n = positions.rows();
  FieldCache<S> local;
  FieldCache<S>& c = cache ? *cache : local;
  c.base_in.assign(size_t(cfg.base_depth), Mat<S>());
  c.base_post.assign(size_t(cfg.base_depth), Mat<S>());
  c.head_in.assign(size_t(cfg.head_depth), Mat<S>());
  c.head_post.assign(size_t(cfg.head_depth), Mat<S>());
  c.density_only = density_only;

  Mat<S> scaled = positions / S(cfg.scene_radius);
  positional_encode(scaled, cfg.L_pos, c.enc_pos);

  size_t idx = 0;  // entry cursor; entries were added in a fixed order
  Mat<S> h = c.enc_pos;
  for (int i = 0; i < cfg.base_depth; ++i) {
    if (i == cfg.skip_layer && i > 0) {
      Mat<S> cat(n, h.cols() + c.enc_pos.cols());
      cat << h, c.enc_pos;
      h = std::move(cat);
    }
    c.base_in[size_t(i)] = h;
    Mat<S> pre;
    nn::affine_forward(h, p.entries[idx].W, p.entries[idx].b, pre);
    ++idx;
    nn::relu(pre, c.base_post[size_t(i)]);
    h = c.base_post[size_t(i)];
  }

  nn::affine_forward(h, p.entries[idx].W, p.entries[idx].b, c.sigma_pre);
  ++idx;
  nn::softplus(c.sigma_pre, out.sigma);

  if (density_only) {
    out.radiance.resize(n, 0);
    c.valid = true;
    return;
  }

  nn::affine_forward(h, p.entries[idx].W, p.entries[idx].b, c.feat);
  ++idx;

  positional_encode(dirs, cfg.L_dir, c.enc_dir);
  Mat<S> hh(n, c.feat.cols() + c.enc_dir.cols());
  hh << c.feat, c.enc_dir;
  for (int i = 0; i < cfg.head_depth; ++i) {
    c.head_in[size_t(i)] = hh;
    Mat<S> pre;
    nn::affine_forward(hh, p.entries[idx].W, p.entries[idx].b, pre);
    ++idx;
    nn::relu(pre, c.head_post[size_t(i)]);
    hh = c.head_post[size_t(i)];
  }
  nn::affine_forward(hh, p.entries[idx].W, p.entries[idx].b, out.radiance);
  c.valid = true;
}

// Accumulates parameter gradients into `grads` given cotangents of sigma and
// radiance. The cache must come from a field_forward call on `p` with
// matching inputs.
template <class S>
void field_backward(const nn::ParamStore<S>& p, const FieldConfig& cfg,
                    FieldCache<S>& c, const Mat<S>& dsigma,
                    const Mat<S>& dradiance, nn::GradBuffer<S>& grads) {
  check_usage(c.valid, "field_backward: stale or missing forward cache");

  const size_t sigma_idx = size_t(cfg.base_depth);
  const size_t feat_idx = sigma_idx + 1;
  const size_t head0_idx = feat_idx + 1;
  const size_t rad_idx = head0_idx + size_t(cfg.head_depth);

  Mat<S> d_base_out;  // cotangent of the base trunk output
  Mat<S> tmp, dpre;

  // Density branch: softplus'(x) = sigmoid(x).
  nn::softplus_backward(dsigma, c.sigma_pre, dpre);
  nn::affine_backward(dpre, c.base_post[size_t(cfg.base_depth - 1)],
                      p.entries[sigma_idx].W, d_base_out, grads.dW[sigma_idx],
                      grads.db[sigma_idx]);

  if (!c.density_only) {
    // Radiance head.
    Mat<S> dh;
    nn::affine_backward(dradiance, c.head_post[size_t(cfg.head_depth - 1)],
                        p.entries[rad_idx].W, dh, grads.dW[rad_idx],
                        grads.db[rad_idx]);
    for (int i = cfg.head_depth - 1; i >= 0; --i) {
      nn::relu_backward(dh, c.head_post[size_t(i)], dpre);
      nn::affine_backward(dpre, c.head_in[size_t(i)],
                          p.entries[head0_idx + size_t(i)].W, dh,
                          grads.dW[head0_idx + size_t(i)],
                          grads.db[head0_idx + size_t(i)]);
    }
    // Split the head-input cotangent: features part flows into the feat
    // layer; the encoded-direction part is an input, not a parameter.
    Mat<S> dfeat = dh.leftCols(c.feat.cols());
    nn::affine_backward(dfeat, c.base_post[size_t(cfg.base_depth - 1)],
                        p.entries[feat_idx].W, tmp, grads.dW[feat_idx],
                        grads.db[feat_idx]);
    d_base_out += tmp;
  }

  // Base trunk.
  Mat<S> dh = std::move(d_base_out);
  for (int i = cfg.base_depth - 1; i >= 0; --i) {
    nn::relu_backward(dh, c.base_post[size_t(i)], dpre);
    Mat<S> dx;
    nn::affine_backward(dpre, c.base_in[size_t(i)], p.entries[size_t(i)].W, dx,
                        grads.dW[size_t(i)], grads.db[size_t(i)]);
    if (i == cfg.skip_layer && i > 0)
      dh = dx.leftCols(cfg.base_width);  // drop the skip-input block
    else
      dh = std::move(dx);
  }
  c.valid = false;
}

// Point evaluation, the spec-level field_eval surface.
template <class S>
struct FieldOutput {
  Vec<S> sigma;
  Vec<S> radiance;
};

template <class S>
FieldOutput<S> field_eval(const nn::ParamStore<S>& p, const FieldConfig& cfg,
                          const Vec3T<S>& x, const Vec3T<S>& d) {
  check_input(std::abs(d.norm() - S(1)) < S(1e-6),
              "field_eval: direction must be unit length");
  Mat<S> pos(1, 3), dir(1, 3);
  pos.row(0) = x.transpose();
  dir.row(0) = d.transpose();
  FieldOutputBatch<S> out;
  field_forward(p, cfg, pos, dir, out, nullptr);
  return {out.sigma.row(0).transpose(), out.radiance.row(0).transpose()};
}

}  // namespace hsnerf::field
