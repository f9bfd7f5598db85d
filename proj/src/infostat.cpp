#include "anomseg/infostat.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "anomseg/error.hpp"
#include "anomseg/rng.hpp"

namespace anomseg {

bool cholesky_lower(const Eigen::MatrixXd& a, Eigen::MatrixXd& lower) {
  const Eigen::Index n = a.rows();
  lower = Eigen::MatrixXd::Zero(n, n);
  double scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) scale = std::max(scale, std::abs(a(i, i)));
  const double floor = std::max(scale, 1.0) * 1e-13;
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= lower(j, k) * lower(j, k);
    if (!(d > floor)) return false;
    const double ljj = std::sqrt(d);
    lower(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / ljj;
    }
  }
  return true;
}

GaussianModel::GaussianModel(Eigen::VectorXd mean, Eigen::MatrixXd cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size() || mean_.size() == 0)
    throw DataError("gaussian: mean/covariance shapes disagree");
  if (!cov_.allFinite() || !mean_.allFinite()) throw NumericError("gaussian: non-finite parameters");
  const double asym = (cov_ - cov_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9) throw NumericError("gaussian: covariance is not symmetric");
  if (!cholesky_lower(cov_, chol_)) throw NumericError("gaussian: covariance is not positive definite");
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
}

double GaussianModel::quadratic_form(const Eigen::VectorXd& z) const {
  if (z.size() != mean_.size()) throw DataError("gaussian: dimension mismatch");
  const Eigen::VectorXd w = chol_.triangularView<Eigen::Lower>().solve(z - mean_);
  return w.squaredNorm();
}

double GaussianModel::quadratic_form(std::span<const double> z) const {
  return quadratic_form(Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size())).eval());
}

double gaussian_information(const GaussianModel& model, const Eigen::VectorXd& z) {
  const double d = model.dim();
  return 0.5 * d * std::log(2.0 * std::numbers::pi) + 0.5 * model.log_det() + 0.5 * model.quadratic_form(z);
}

double gaussian_information(const GaussianModel& model, std::span<const double> z) {
  return gaussian_information(model, Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size())).eval());
}

namespace {

GaussianModel finish_fit(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
  cov = 0.5 * (cov + cov.transpose());
  Eigen::MatrixXd lower;
  if (cholesky_lower(cov, lower)) return GaussianModel(std::move(mean), std::move(cov));
  cov.diagonal().array() += kCovarianceRidge;
  if (!cholesky_lower(cov, lower)) throw NumericError("gaussian fit: covariance singular even after ridge");
  GaussianModel model(std::move(mean), std::move(cov));
  model.mark_ridged();
  return model;
}

}  // namespace

GaussianModel fit_gaussian(const Eigen::MatrixXd& samples) {
  const Eigen::Index n = samples.rows();
  if (n == 0 || samples.cols() == 0) throw DataError("gaussian fit: no samples");
  Eigen::VectorXd mean = samples.colwise().mean().transpose();
  Eigen::MatrixXd centered = samples.rowwise() - mean.transpose();
  Eigen::MatrixXd cov = n > 1 ? Eigen::MatrixXd((centered.transpose() * centered) / static_cast<double>(n - 1))
                              : Eigen::MatrixXd::Zero(samples.cols(), samples.cols());
  return finish_fit(std::move(mean), std::move(cov));
}

GaussianAccumulator::GaussianAccumulator(int dim)
    : sum_(Eigen::VectorXd::Zero(dim)), outer_(Eigen::MatrixXd::Zero(dim, dim)) {}

void GaussianAccumulator::add(std::span<const double> z) {
  if (static_cast<Eigen::Index>(z.size()) != sum_.size()) throw DataError("gaussian accumulator: dimension mismatch");
  if (shift_.empty()) shift_.assign(z.begin(), z.end());
  Eigen::VectorXd v(sum_.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = z[i] - shift_[i];
  sum_ += v;
  outer_.selfadjointView<Eigen::Lower>().rankUpdate(v);
  ++count_;
}

GaussianModel GaussianAccumulator::fit() const {
  if (count_ == 0) throw DataError("gaussian fit: no samples");
  const double n = static_cast<double>(count_);
  Eigen::VectorXd centered_mean = sum_ / n;
  Eigen::MatrixXd outer = outer_.selfadjointView<Eigen::Lower>();
  Eigen::MatrixXd cov = count_ > 1 ? Eigen::MatrixXd((outer - n * centered_mean * centered_mean.transpose()) / (n - 1.0))
                                   : Eigen::MatrixXd::Zero(sum_.size(), sum_.size());
  Eigen::VectorXd mean = centered_mean;
  for (Eigen::Index i = 0; i < mean.size(); ++i) mean(i) += shift_[i];
  return finish_fit(std::move(mean), std::move(cov));
}

GaussianModel transform_affine(const GaussianModel& model, const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  Eigen::MatrixXd cov = a * model.cov() * a.transpose();
  cov = 0.5 * (cov + cov.transpose());
  return GaussianModel(a * model.mean() + b, std::move(cov));
}

double relative_information(const GaussianModel& data_model, const GaussianModel& anomaly_model,
                            const Eigen::VectorXd& z) {
  return gaussian_information(data_model, z) - gaussian_information(anomaly_model, z);
}

double BinaryOddsClassifier::probability(const Eigen::VectorXd& z) const {
  const double t = weights.dot(z) + bias;
  const double p = t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
  return std::clamp(p, 1e-12, 1.0 - 1e-12);
}

double classifier_relative_information(const BinaryOddsClassifier& clf, const Eigen::VectorXd& z) {
  if (!(clf.prior_anomaly > 0.0 && clf.prior_anomaly < 1.0)) throw ConfigError("prior must lie strictly in (0,1)");
  const double p = clf.probability(z);
  const double c = -std::log(clf.prior_anomaly / (1.0 - clf.prior_anomaly));
  return -std::log((1.0 - p) / p) + c;
}

OutlierDecision outlier_test(std::span<const double> train_informations, double information, double alpha,
                             int bootstrap_rounds, std::uint64_t seed) {
  if (train_informations.empty()) throw DataError("outlier test: empty training set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
  if (bootstrap_rounds < 1) throw ConfigError("bootstrap rounds must be positive");
  SplitMix64 rng(seed);
  const auto n = train_informations.size();
  int exceed = 0;
  for (int b = 0; b < bootstrap_rounds; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, train_informations[rng.below(n)]);
    if (mx > information) ++exceed;
  }
  OutlierDecision d;
  d.exceedance = static_cast<double>(exceed) / bootstrap_rounds;
  d.outlier = d.exceedance <= alpha;
  return d;
}

NoveltyDecision novelty_test(std::span<const double> train_informations, double information, double alpha) {
  if (train_informations.empty()) throw DataError("novelty test: empty training set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0,1)");
  const auto above = std::count_if(train_informations.begin(), train_informations.end(),
                                   [&](double v) { return v > information; });
  NoveltyDecision d;
  d.exceedance = static_cast<double>(above) / static_cast<double>(train_informations.size());
  d.novel = d.exceedance <= alpha;
  return d;
}

double entropy(std::span<const double> probs) {
  double e = 0.0;
  for (double p : probs) {
    if (p > 0.0) e -= p * std::log(p);
  }
  return e;
}

double expected_information(std::span<const double> cond_probs, double information_x, bool relative) {
  if (cond_probs.empty()) throw DataError("expected information: empty distribution");
  double total = 0.0;
  for (double p : cond_probs) {
    if (p < 0.0) throw DataError("expected information: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw DataError("expected information: probabilities do not sum to 1");
  const double bias = relative ? -std::log(static_cast<double>(cond_probs.size())) : 0.0;
  return entropy(cond_probs) + information_x + bias;
}

Eigen::MatrixXd read_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      while (end && (*end == ' ' || *end == '\t')) ++end;
      if (cell.empty() || end == cell.c_str() || *end != '\0' || !std::isfinite(v)) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": not a numeric row");
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": row width differs");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("no samples in " + path.string());
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace anomseg
