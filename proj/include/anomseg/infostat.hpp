#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace anomseg {

inline constexpr double kCovarianceRidge = 1e-6;

// Multivariate normal with a cached Cholesky factor of the covariance.
class GaussianModel {
 public:
  GaussianModel() = default;
  // Throws a numeric error when cov is not symmetric (1e-9) or not positive definite.
  GaussianModel(Eigen::VectorXd mean, Eigen::MatrixXd cov);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  const Eigen::MatrixXd& cholesky() const { return chol_; }
  double log_det() const { return log_det_; }
  bool ridged() const { return ridged_; }

  // (z - mean)^T cov^{-1} (z - mean), via triangular solve.
  double quadratic_form(std::span<const double> z) const;
  double quadratic_form(const Eigen::VectorXd& z) const;

  void mark_ridged() { ridged_ = true; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;
  double log_det_ = 0.0;
  bool ridged_ = false;
};

// Lower Cholesky factor; returns false when a pivot is not strictly positive.
bool cholesky_lower(const Eigen::MatrixXd& a, Eigen::MatrixXd& lower);

// I(z) = (d/2) ln 2pi + 1/2 ln det cov + 1/2 (z-mu)^T cov^{-1} (z-mu), in nats.
double gaussian_information(const GaussianModel& model, std::span<const double> z);
double gaussian_information(const GaussianModel& model, const Eigen::VectorXd& z);

// Mean and 1/(n-1) covariance of the rows; adds kCovarianceRidge * I when the
// covariance is not positive definite.
GaussianModel fit_gaussian(const Eigen::MatrixXd& samples);

// Streaming accumulator for large sample sets (pixel features).
class GaussianAccumulator {
 public:
  explicit GaussianAccumulator(int dim);
  void add(std::span<const double> z);
  std::int64_t count() const { return count_; }
  GaussianModel fit() const;

 private:
  std::int64_t count_ = 0;
  Eigen::VectorXd sum_;
  Eigen::MatrixXd outer_;
  std::vector<double> shift_;  // first sample, subtracted for numerical stability
};

// Model of z' = A z + b when z follows `model`.
GaussianModel transform_affine(const GaussianModel& model, const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

// I(z) - I^anom(z).
double relative_information(const GaussianModel& data_model, const GaussianModel& anomaly_model,
                            const Eigen::VectorXd& z);

struct BinaryOddsClassifier {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double prior_anomaly = 0.5;  // P(anom), strictly inside (0,1)

  // logistic(w^T z + b), clamped to [1e-12, 1 - 1e-12].
  double probability(const Eigen::VectorXd& z) const;
};

// -log((1 - p(anom|z)) / p(anom|z)) + c with prior log-odds c = -log(P(anom) / (1 - P(anom))).
double classifier_relative_information(const BinaryOddsClassifier& clf, const Eigen::VectorXd& z);

struct OutlierDecision {
  bool outlier = false;
  double exceedance = 0.0;  // bootstrap estimate of P(I^max > I(z))
};

// Bootstrap estimate of the extremal-statistic tail; outlier iff exceedance <= alpha.
OutlierDecision outlier_test(std::span<const double> train_informations, double information, double alpha,
                             int bootstrap_rounds, std::uint64_t seed);

struct NoveltyDecision {
  bool novel = false;
  double exceedance = 0.0;  // fraction of training informations strictly above I(z)
};

NoveltyDecision novelty_test(std::span<const double> train_informations, double information, double alpha);

// -sum p log p in nats, with 0 log 0 = 0.
double entropy(std::span<const double> probs);

// E(x) + I^rel(x) + b^rel, b^rel = 0 (absolute) or -log S (relative, non-informative
// anomaly conditional). Throws when probs do not sum to 1 within 1e-6.
double expected_information(std::span<const double> cond_probs, double information_x, bool relative);

// One sample per row, comma separated. A first row that does not parse as numbers
// is taken as a header. Rows must agree in width.
Eigen::MatrixXd read_csv_matrix(const std::filesystem::path& path);

}  // namespace anomseg
