#include "anomseg/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "anomseg/error.hpp"
#include "anomseg/rng.hpp"
#include "anomseg/segments.hpp"

namespace anomseg {

std::vector<AnomalyComponent> extract_components(std::span<const AnomalyMap> maps, std::span<const Image> images,
                                                 double tau, int min_size, std::span<const LabelMap> exclude) {
  if (maps.size() != images.size()) throw DataError("extract components: maps and images count differ");
  if (!exclude.empty() && exclude.size() != maps.size()) throw DataError("extract components: exclude count differs");
  std::vector<AnomalyComponent> out;
  for (std::size_t n = 0; n < maps.size(); ++n) {
    const auto& a = maps[n].scores;
    if (!a.same_plane(images[n])) throw DataError("extract components: shape mismatch");
    LabelMap binary(a.height(), a.width());
    for (int i = 0; i < a.pixels(); ++i) {
      const bool excluded = !exclude.empty() && exclude[n].data()[i] == kIgnoreLabel;
      binary.data()[i] = (a.data()[i] >= tau && !excluded) ? 1 : 0;
    }
    for (auto& seg : binary_components(binary)) {
      if (seg.size() < min_size) continue;
      AnomalyComponent c;
      c.image_id = static_cast<int>(n);
      c.pixels = std::move(seg.pixels);
      c.min_row = seg.min_row;
      c.max_row = seg.max_row;
      c.min_col = seg.min_col;
      c.max_col = seg.max_col;
      c.crop = Image(c.max_row - c.min_row + 1, c.max_col - c.min_col + 1, 3);
      for (int y = c.min_row; y <= c.max_row; ++y)
        for (int x = c.min_col; x <= c.max_col; ++x)
          for (int ch = 0; ch < 3; ++ch) c.crop(y - c.min_row, x - c.min_col, ch) = images[n](y, x, ch);
      out.push_back(std::move(c));
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (image.empty()) throw DataError("resize: empty crop");
  Image out(height, width, image.channels());
  Grid<double> plane(image.height(), image.width(), 1);
  for (int c = 0; c < image.channels(); ++c) {
    for (int i = 0; i < image.pixels(); ++i) plane.data()[i] = image.pixel(i)[c];
    const auto up = upsample_bilinear(plane, height, width);
    for (int i = 0; i < out.pixels(); ++i) out.pixel(i)[c] = up.data()[i];
  }
  return out;
}

std::vector<double> embed_crop(const Image& crop, const NetParams& params) {
  const auto resized = resize_bilinear(crop, kCropSize, kCropSize);
  const auto fwd = forward(params, resized);
  std::vector<double> mean(fwd.features.channels(), 0.0);
  const double inv = 1.0 / fwd.features.pixels();
  for (int i = 0; i < fwd.features.pixels(); ++i) {
    const auto f = fwd.features.pixel(i);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += f[c] * inv;
  }
  return mean;
}

void embed_crops(std::span<AnomalyComponent> components, const NetParams& params) {
  for (auto& c : components) c.feature = embed_crop(c.crop, params);
}

SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& symmetric, double tolerance, int max_sweeps) {
  const Eigen::Index n = symmetric.rows();
  if (n != symmetric.cols()) throw DataError("jacobi: matrix must be square");
  Eigen::MatrixXd a = 0.5 * (symmetric + symmetric.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = std::max(a.norm(), 1e-300);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(off) <= tolerance * scale) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = a(order[k], order[k]);
    Eigen::VectorXd col = v.col(order[k]);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(col(i)) > 1e-12) {
        if (col(i) < 0) col = -col;
        break;
      }
    }
    out.vectors.col(k) = col;
  }
  return out;
}

PcaResult pca_reduce(const Eigen::MatrixXd& vectors, int target) {
  const Eigen::Index n = vectors.rows();
  if (target < 1 || target > vectors.cols()) throw ConfigError("pca: target dimension out of range");
  if (n <= target) throw DataError("pca: need more points than target dimensions");
  PcaResult r;
  r.mean = vectors.colwise().mean().transpose();
  const Eigen::MatrixXd centered = vectors.rowwise() - r.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  const auto eig = jacobi_eigen(cov);
  r.eigenvalues = eig.values;
  r.components = eig.vectors.leftCols(target);
  r.projected = centered * r.components;
  return r;
}

Eigen::MatrixXd tsne_affinities(const Eigen::MatrixXd& x, double perplexity) {
  const Eigen::Index n = x.rows();
  if (!(perplexity >= 1.0) || static_cast<double>(n) < 3.0 * perplexity)
    throw ConfigError("tsne: perplexity infeasible for " + std::to_string(n) + " points");
  Eigen::MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();

  const double target = std::log(perplexity);
  Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d2(i, j));
    for (int step = 0; step < 50; ++step) {
      double sum = 0.0;
      double weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-beta * (d2(i, j) - dmin));
        sum += row[j];
        weighted += row[j] * (d2(i, j) - dmin);
      }
      // Shannon entropy (nats) of the conditional distribution.
      const double h = std::log(sum) + beta * weighted / sum;
      for (Eigen::Index j = 0; j < n; ++j) cond(i, j) = row[j] / sum;
      const double diff = h - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  Eigen::MatrixXd p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
  return p;
}

namespace {

// Unnormalized Student-t kernel (1 + |y_i - y_j|^2)^-1 with a zero diagonal.
Eigen::MatrixXd student_kernel(const Eigen::MatrixXd& y, double& total) {
  const Eigen::Index n = y.rows();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
      w(i, j) = v;
      w(j, i) = v;
      total += 2.0 * v;
    }
  }
  return w;
}

}  // namespace

double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
  double total = 0.0;
  const auto w = student_kernel(y, total);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (i == j || p(i, j) <= 0.0) continue;
      const double q = std::max(w(i, j) / total, 1e-300);
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  }
  return kl;
}

Eigen::MatrixXd tsne_gradient(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
  double total = 0.0;
  const auto w = student_kernel(y, total);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      if (i == j) continue;
      const double q = w(i, j) / total;
      grad.row(i) += 4.0 * (p(i, j) - q) * w(i, j) * (y.row(i) - y.row(j));
    }
  }
  return grad;
}

constexpr double kMinGain = 0.01;

TsneResult tsne(const Eigen::MatrixXd& vectors, const TsneOptions& options) {
  if (options.iterations < 0) throw ConfigError("tsne: iterations must be nonnegative");
  const Eigen::MatrixXd p = tsne_affinities(vectors, options.perplexity);
  const Eigen::Index n = vectors.rows();
  SplitMix64 rng(options.seed);
  Eigen::MatrixXd y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) y(i, c) = 1e-4 * rng.normal();

  TsneResult r;
  r.kl_initial = tsne_kl(p, y);
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
  // Per-coordinate gains as in the reference implementation; plain momentum
  // descent oscillates at the usual learning rates on small point sets.
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  for (int it = 0; it < options.iterations; ++it) {
    const bool exaggerate = it < options.exaggeration_iterations;
    const double momentum = it < options.momentum_switch ? 0.5 : 0.8;
    const Eigen::MatrixXd grad = tsne_gradient(exaggerate ? Eigen::MatrixXd(p * options.exaggeration) : p, y);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        const bool flip = (grad(i, c) > 0.0) != (velocity(i, c) > 0.0);
        gains(i, c) = std::max(kMinGain, flip ? gains(i, c) + 0.2 : gains(i, c) * 0.8);
      }
    velocity = momentum * velocity - options.learning_rate * gains.cwiseProduct(grad);
    y += velocity;
    y.rowwise() -= y.colwise().mean();
    if ((it + 1) % 50 == 0) {
      const double kl = tsne_kl(p, y);
      if (!std::isfinite(kl)) throw NumericError("tsne: KL divergence is not finite");
      r.kl_trace.push_back(kl);
    }
  }
  r.kl_final = tsne_kl(p, y);
  if (!std::isfinite(r.kl_final)) throw NumericError("tsne: KL divergence is not finite");
  r.kl_trace.push_back(r.kl_final);
  r.embedding = std::move(y);
  return r;
}

std::vector<int> ClusterSet::members(int cluster) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cluster) out.push_back(static_cast<int>(i));
  }
  return out;
}

double median_neighbor_distance(const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  if (n < 2) throw DataError("spacing: need at least 2 points");
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) nearest[i] = std::min(nearest[i], (points.row(i) - points.row(j)).norm());
  std::sort(nearest.begin(), nearest.end());
  return n % 2 == 1 ? nearest[n / 2] : 0.5 * (nearest[n / 2 - 1] + nearest[n / 2]);
}

Eigen::MatrixXd normalize_spacing(const Eigen::MatrixXd& points) {
  const double m = median_neighbor_distance(points);
  return m > 0.0 ? Eigen::MatrixXd(points / m) : points;
}

ClusterSet dbscan(const Eigen::MatrixXd& points, double eps, int min_points) {
  if (!(eps > 0.0)) throw ConfigError("dbscan: eps must be positive");
  if (min_points < 1) throw ConfigError("dbscan: min points must be >= 1");
  const int n = static_cast<int>(points.rows());
  const double eps2 = eps * eps;
  std::vector<std::vector<int>> nbr(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if ((points.row(i) - points.row(j)).squaredNorm() <= eps2) nbr[i].push_back(j);

  ClusterSet cs;
  cs.labels.assign(n, kNoise);
  cs.density.resize(n);
  cs.core.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    cs.density[i] = static_cast<int>(nbr[i].size());
    cs.core[i] = cs.density[i] >= min_points ? 1 : 0;
  }

  // Flood fill over core points, seeded in index order.
  std::vector<int> stack;
  for (int i = 0; i < n; ++i) {
    if (!cs.core[i] || cs.labels[i] != kNoise) continue;
    const int id = cs.cluster_count++;
    cs.labels[i] = id;
    stack.assign(1, i);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      for (int q : nbr[p]) {
        if (cs.core[q] && cs.labels[q] == kNoise) {
          cs.labels[q] = id;
          stack.push_back(q);
        }
      }
    }
  }

  auto coords_less = [&](int a, int b) {
    for (Eigen::Index c = 0; c < points.cols(); ++c) {
      if (points(a, c) != points(b, c)) return points(a, c) < points(b, c);
    }
    return a < b;
  };
  std::vector<int> border_label(n, kNoise);
  for (int i = 0; i < n; ++i) {
    if (cs.core[i]) continue;
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int q : nbr[i]) {
      if (!cs.core[q]) continue;
      const double d = (points.row(i) - points.row(q)).squaredNorm();
      if (best < 0 || d < best_d || (d == best_d && coords_less(q, best))) {
        best = q;
        best_d = d;
      }
    }
    if (best >= 0) border_label[i] = cs.labels[best];
  }
  for (int i = 0; i < n; ++i) {
    if (!cs.core[i]) cs.labels[i] = border_label[i];
  }

  // Renumber by lowest member index (core seeding may skip a border point that
  // precedes its cluster's first core point).
  std::vector<int> remap(cs.cluster_count, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int l = cs.labels[i];
    if (l != kNoise && remap[l] < 0) remap[l] = next++;
  }
  for (auto& l : cs.labels) {
    if (l != kNoise) l = remap[l];
  }
  return cs;
}

double cluster_density(const ClusterSet& clusters, int cluster, DensityStatistic statistic) {
  const auto m = clusters.members(cluster);
  if (m.empty()) throw DataError("cluster density: empty cluster");
  double best = 0.0;
  double sum = 0.0;
  for (int i : m) {
    best = std::max(best, static_cast<double>(clusters.density[i]));
    sum += clusters.density[i];
  }
  return statistic == DensityStatistic::kMax ? best : sum / static_cast<double>(m.size());
}

int select_cluster(const ClusterSet& clusters, DensityStatistic statistic, int min_size) {
  int best = -1;
  double best_density = 0.0;
  std::size_t best_size = 0;
  for (int c = 0; c < clusters.cluster_count; ++c) {
    const auto size = clusters.members(c).size();
    if (static_cast<int>(size) < min_size) continue;
    const double d = cluster_density(clusters, c, statistic);
    if (best < 0 || d > best_density || (d == best_density && size > best_size)) {
      best = c;
      best_density = d;
      best_size = size;
    }
  }
  if (best < 0) throw DataError("no cluster with at least " + std::to_string(min_size) + " members");
  return best;
}

LabelMap pseudo_labels(const LabelMap& predicted, std::span<const std::vector<int>> component_pixels,
                       std::uint8_t new_label) {
  LabelMap out = predicted;
  for (const auto& pixels : component_pixels) {
    for (int p : pixels) {
      if (p < 0 || p >= predicted.pixels()) throw DataError("pseudo labels: component out of bounds");
      out.data()[p] = new_label;
    }
  }
  return out;
}

RehearsalPlan rehearsal_quota(std::span<const PseudoLabeled> pseudo_set, int old_classes,
                              std::span<const LabelMap> old_training_labels, std::uint64_t seed,
                              int attempts_per_relaxation) {
  RehearsalPlan plan;
  plan.nu_total.assign(old_classes, 0);
  const auto new_label = static_cast<std::uint8_t>(old_classes);
  for (const auto& s : pseudo_set) {
    if (!s.predicted->same_plane(*s.pseudo)) throw DataError("rehearsal: shape mismatch");
    for (int i = 0; i < s.pseudo->pixels(); ++i) {
      const auto m = s.predicted->data()[i];
      if (s.pseudo->data()[i] == new_label && m < old_classes) ++plan.nu_total[m];
    }
  }
  const auto total = std::accumulate(plan.nu_total.begin(), plan.nu_total.end(), std::int64_t{0});
  if (total == 0) throw DataError("rehearsal: no relabeled pixels");
  for (auto v : plan.nu_total) plan.nu_relative.push_back(static_cast<double>(v) / static_cast<double>(total));

  const int subset = static_cast<int>(std::min(pseudo_set.size(), old_training_labels.size()));
  for (double nu : plan.nu_relative) plan.quota.push_back(static_cast<int>(std::ceil(nu * subset - 1e-9)));

  // contains[i][s]: old training image i shows class s.
  std::vector<std::vector<char>> contains(old_training_labels.size(), std::vector<char>(old_classes, 0));
  for (std::size_t i = 0; i < old_training_labels.size(); ++i) {
    for (auto l : old_training_labels[i].data()) {
      if (l < old_classes) contains[i][l] = 1;
    }
  }

  SplitMix64 rng(seed);
  std::vector<int> pool(old_training_labels.size());
  std::iota(pool.begin(), pool.end(), 0);
  auto satisfies = [&](const std::vector<int>& chosen) {
    std::vector<int> have(old_classes, 0);
    for (int i : chosen)
      for (int s = 0; s < old_classes; ++s) have[s] += contains[i][s];
    for (int s = 0; s < old_classes; ++s)
      if (have[s] < plan.quota[s]) return false;
    return true;
  };
  for (;;) {
    for (int a = 0; a < attempts_per_relaxation; ++a) {
      rng.shuffle(pool);
      std::vector<int> chosen(pool.begin(), pool.begin() + subset);
      if (satisfies(chosen)) {
        std::sort(chosen.begin(), chosen.end());
        plan.selected = std::move(chosen);
        return plan;
      }
    }
    const auto largest = std::max_element(plan.quota.begin(), plan.quota.end());
    if (*largest == 0) break;
    --*largest;
  }
  return plan;
}

}  // namespace anomseg
