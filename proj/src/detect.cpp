#include "hsnerf/detect.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hsnerf::detect {

namespace {
MatD regularize(const MatD& cov, double shrinkage) {
  const Eigen::Index c = cov.rows();
  const double ridge = shrinkage * cov.trace() / double(c) + 1e-8;
  return (1.0 - shrinkage) * cov + ridge * MatD::Identity(c, c);
}
}  // namespace

BackgroundModel BackgroundModel::fit(const MatD& pixels, double shrinkage) {
  check_input(pixels.rows() >= 2, "BackgroundModel: need at least 2 pixels");
  BackgroundModel bg;
  bg.n_pixels = pixels.rows();
  bg.mean = pixels.colwise().mean();
  MatD centered = pixels.rowwise() - bg.mean.transpose();
  bg.cov = centered.transpose() * centered / double(pixels.rows() - 1);
  bg.cov_reg = regularize(bg.cov, shrinkage);
  bg.cov_inv = bg.cov_reg.llt().solve(MatD::Identity(bg.cov.rows(), bg.cov.cols()));
  return bg;
}

BackgroundModel BackgroundModel::from_moments(const VecD& mean, const MatD& cov,
                                              double shrinkage) {
  BackgroundModel bg;
  bg.mean = mean;
  bg.cov = cov;
  bg.cov_reg = shrinkage > 0.0 ? regularize(cov, shrinkage) : cov;
  bg.cov_inv = bg.cov_reg.llt().solve(MatD::Identity(cov.rows(), cov.cols()));
  bg.n_pixels = 0;
  return bg;
}

VecD ace_scores(const MatD& pixels, const VecD& target,
                const BackgroundModel& bg) {
  check_input(pixels.cols() == bg.mean.size(),
              "ace_scores: channel count mismatch with background model");
  check_input(target.size() == bg.mean.size(),
              "ace_scores: target channel count mismatch");
  Eigen::LLT<MatD> llt(bg.cov_reg);
  check_input(llt.info() == Eigen::Success,
              "ace_scores: background covariance not positive definite");
  // Whiten with L^-1 so the score is the squared cosine between whitened
  // target and whitened deviation.
  const MatD L = llt.matrixL();
  VecD wt = L.triangularView<Eigen::Lower>().solve(target);
  const double nt = wt.norm();
  check_input(nt >= 1e-12, "ace_scores: target has near-zero whitened norm");
  wt /= nt;

  MatD dev = (pixels.rowwise() - bg.mean.transpose()).transpose();  // c x n
  L.triangularView<Eigen::Lower>().solveInPlace(dev);
  VecD scores(pixels.rows());
  for (Eigen::Index i = 0; i < pixels.rows(); ++i) {
    const double ny2 = dev.col(i).squaredNorm();
    if (ny2 < 1e-24) {
      scores(i) = 0.0;
      continue;
    }
    const double proj = wt.dot(dev.col(i));
    scores(i) = std::min(1.0, proj * proj / ny2);
  }
  return scores;
}

double roc_auc(const VecD& scores, const std::vector<uint8_t>& labels) {
  check_input(size_t(scores.size()) == labels.size(),
              "roc_auc: size mismatch");
  int64_t n_pos = 0;
  for (uint8_t l : labels) n_pos += l ? 1 : 0;
  const int64_t n = scores.size();
  const int64_t n_neg = n - n_pos;
  check_input(n_pos > 0 && n_neg > 0,
              "roc_auc: both classes must be present");

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores(a) < scores(b); });

  // Midranks over tie groups.
  double rank_sum_pos = 0.0;
  int64_t i = 0;
  while (i < n) {
    int64_t j = i;
    while (j + 1 < n && scores(order[size_t(j + 1)]) == scores(order[size_t(i)]))
      ++j;
    const double midrank = 0.5 * double(i + j) + 1.0;  // ranks are 1-based
    for (int64_t k = i; k <= j; ++k)
      if (labels[size_t(order[size_t(k)])]) rank_sum_pos += midrank;
    i = j + 1;
  }
  return (rank_sum_pos - 0.5 * double(n_pos) * double(n_pos + 1)) /
         (double(n_pos) * double(n_neg));
}

std::pair<double, double> tpr_fpr(const std::vector<uint8_t>& pred,
                                  const std::vector<uint8_t>& ref) {
  check_input(pred.size() == ref.size(), "tpr_fpr: shape mismatch");
  int64_t tp = 0, fp = 0, pos = 0, neg = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (ref[i]) {
      ++pos;
      if (pred[i]) ++tp;
    } else {
      ++neg;
      if (pred[i]) ++fp;
    }
  }
  check_input(pos > 0, "tpr_fpr: reference mask is empty");
  const double tpr = double(tp) / double(pos);
  const double fpr = neg > 0 ? double(fp) / double(neg) : 0.0;
  return {tpr, fpr};
}

double psnr(const io::HsiCube& render, const io::HsiCube& truth, double peak) {
  check_input(render.height == truth.height && render.width == truth.width &&
                  render.channels() == truth.channels(),
              "psnr: shape mismatch");
  check_input(peak > 0.0, "psnr: peak must be positive");
  double mse = 0.0;
  for (size_t i = 0; i < render.data.size(); ++i) {
    const double d = double(render.data[i]) - double(truth.data[i]);
    mse += d * d;
  }
  mse /= double(render.data.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(peak * peak / mse));
}

namespace {
// 11x11 Gaussian window, sigma 1.5, normalized.
MatD ssim_window() {
  MatD w(11, 11);
  for (int r = 0; r < 11; ++r)
    for (int c = 0; c < 11; ++c) {
      const double dr = r - 5, dc = c - 5;
      w(r, c) = std::exp(-(dr * dr + dc * dc) / (2.0 * 1.5 * 1.5));
    }
  return w / w.sum();
}
}  // namespace

double ssim(const io::HsiCube& render, const io::HsiCube& truth,
            double dynamic_range) {
  check_input(render.height == truth.height && render.width == truth.width &&
                  render.channels() == truth.channels(),
              "ssim: shape mismatch");
  check_input(render.height >= 11 && render.width >= 11,
              "ssim: spatial dims must be >= 11");
  check_input(dynamic_range > 0.0, "ssim: dynamic range must be positive");
  static const MatD window = ssim_window();
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  const int H = render.height, W = render.width, C = render.channels();

  double total = 0.0;
  for (int ch = 0; ch < C; ++ch) {
    double acc = 0.0;
    int64_t count = 0;
    // Windows fully inside the image (the "valid" region).
    for (int r = 0; r + 11 <= H; ++r)
      for (int c = 0; c + 11 <= W; ++c) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double wij = window(i, j);
            const double x = render.at(r + i, c + j, ch);
            const double y = truth.at(r + i, c + j, ch);
            mx += wij * x;
            my += wij * y;
            sxx += wij * x * x;
            syy += wij * y * y;
            sxy += wij * x * y;
          }
        const double vx = sxx - mx * mx;
        const double vy = syy - my * my;
        const double cxy = sxy - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    total += acc / double(count);
  }
  return total / double(C);
}

namespace {
double percentile(std::vector<float> v, double p) {
  std::sort(v.begin(), v.end());
  const double idx = p / 100.0 * double(v.size() - 1);
  const size_t lo = size_t(idx);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = idx - double(lo);
  return double(v[lo]) * (1.0 - frac) + double(v[hi]) * frac;
}
}  // namespace

io::PngImage falsecolor(const io::HsiCube& cube, double red_um, double green_um,
                        double blue_um) {
  const double lo_um = cube.wavelengths_um.minCoeff();
  const double hi_um = cube.wavelengths_um.maxCoeff();
  for (double um : {red_um, green_um, blue_um})
    check_input(um >= lo_um && um <= hi_um,
                "falsecolor: wavelength outside the cube band");
  auto nearest = [&](double um) {
    int best = 0;
    for (int j = 1; j < cube.channels(); ++j)
      if (std::abs(cube.wavelengths_um(j) - um) <
          std::abs(cube.wavelengths_um(best) - um))
        best = j;
    return best;
  };
  const int chans[3] = {nearest(red_um), nearest(green_um), nearest(blue_um)};

  io::PngImage img;
  img.width = cube.width;
  img.height = cube.height;
  img.channels = 3;
  img.data.resize(size_t(cube.width) * cube.height * 3);
  for (int k = 0; k < 3; ++k) {
    std::vector<float> vals(cube.pixel_count());
    for (size_t p = 0; p < cube.pixel_count(); ++p)
      vals[p] = cube.data[p * size_t(cube.channels()) + size_t(chans[k])];
    const double lo = percentile(vals, 1.0);
    const double hi = percentile(vals, 99.0);
    const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    for (size_t p = 0; p < cube.pixel_count(); ++p) {
      double v = (double(vals[p]) - lo) * scale;
      if (hi <= lo) v = 128.0;  // constant channel renders mid-gray
      img.data[p * 3 + size_t(k)] =
          uint8_t(std::clamp(v, 0.0, 255.0) + 0.5 > 255.0
                      ? 255
                      : int(std::clamp(v, 0.0, 255.0) + 0.5));
    }
  }
  return img;
}

}  // namespace hsnerf::detect
