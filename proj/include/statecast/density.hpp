#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "statecast/errors.hpp"

namespace statecast {

inline constexpr double kSilvermanFactor = 0.9;
inline constexpr double kFallbackBandwidthFactor = 1.06;
inline constexpr double kCovarianceRidgeScale = 1e-6;
inline constexpr double kCovarianceRidgeFloor = 1e-12;
inline constexpr double kLogTwoPi = 1.8378770664093454836;

/// A scalar sample with non-negative per-point weights. Used for the
/// future-cone values attributed to one predictive state.
struct WeightedSample1D {
    Eigen::VectorXd values;
    Eigen::VectorXd weights;

    double total_weight() const { return weights.sum(); }

    void validate() const {
        detail::require(values.size() == weights.size(),
                        "weighted sample: values/weights length mismatch");
        detail::require(values.size() > 0, "weighted sample: empty");
        detail::require(values.allFinite() && weights.allFinite(),
                        "weighted sample: entries must be finite");
        detail::require((weights.array() >= 0.0).all(), "weighted sample: negative weight");
        detail::require(total_weight() > 0.0, "weighted sample: total weight must be positive");
    }
};

/// Multivariate Gaussian fitted to the past-cone rows of one state.
/// Covariance is ridge-regularized upstream, so the Cholesky factor exists;
/// it is cached at construction and the object is immutable afterwards.
class GaussianComponent {
public:
    GaussianComponent(Eigen::VectorXd mean, Eigen::MatrixXd covariance)
        : mean_(std::move(mean)), covariance_(std::move(covariance)) {
        detail::require(covariance_.rows() == covariance_.cols() &&
                            covariance_.rows() == mean_.size(),
                        "gaussian component: dimension mismatch");
        detail::require(mean_.allFinite() && covariance_.allFinite(),
                        "gaussian component: parameters must be finite");
        detail::require(covariance_.isApprox(covariance_.transpose(), 1e-12),
                        "gaussian component: covariance must be symmetric");
        Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
        detail::require(llt.info() == Eigen::Success,
                        "gaussian component: covariance must be positive definite");
        const Eigen::MatrixXd l = llt.matrixL();
        inv_l_t_ = l.triangularView<Eigen::Lower>()
                       .solve(Eigen::MatrixXd::Identity(mean_.size(), mean_.size()))
                       .transpose();
        log_norm_ = -0.5 * static_cast<double>(mean_.size()) * kLogTwoPi -
                    l.diagonal().array().log().sum();
    }

    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& covariance() const { return covariance_; }
    Eigen::Index dim() const { return mean_.size(); }

    /// Log-density at each row of `points`, evaluated in one pass.
    Eigen::VectorXd log_pdf_rows(const Eigen::Ref<const Eigen::MatrixXd>& points) const {
        detail::require(points.cols() == mean_.size(),
                        "gaussian component: query dimension mismatch");
        Eigen::MatrixXd z = (points.rowwise() - mean_.transpose()) * inv_l_t_;
        return (log_norm_ - 0.5 * z.rowwise().squaredNorm().array()).matrix();
    }

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd covariance_;
    Eigen::MatrixXd inv_l_t_;  // transpose of L^-1 from the Cholesky factor
    double log_norm_;
};

/// Exact multivariate normal log-density.
inline double gaussian_logpdf(const GaussianComponent& component,
                              const Eigen::Ref<const Eigen::VectorXd>& point) {
    return component.log_pdf_rows(point.transpose())(0);
}

/// Weighted Gaussian-kernel density estimate of one state's future-cone
/// distribution: sample, kernel bandwidth, and the state's effective sample
/// size (the total weight).
struct KdeComponent {
    WeightedSample1D sample;
    double bandwidth = 0.0;
    double effective_size = 0.0;

    void validate() const {
        sample.validate();
        detail::require(bandwidth > 0.0, "kde component: bandwidth must be positive");
        detail::require(effective_size > 0.0, "kde component: effective size must be positive");
    }
};

namespace detail {

/// Type-7 quantile (linear interpolation between order statistics) on a
/// sorted vector, the convention the rule-of-thumb bandwidth is defined with.
inline double quantile_type7(const std::vector<double>& sorted, double p) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = (static_cast<double>(n) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double sample_sd(const Eigen::Ref<const Eigen::VectorXd>& v) {
    const double n = static_cast<double>(v.size());
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().sum() / (n - 1.0));
}

}  // namespace detail

/// Rule-of-thumb kernel bandwidth: 0.9 * min(sd, IQR/1.34) * n^(-1/5).
/// When the IQR degenerates to zero the sd takes its place; a sample with
/// fewer than two points or no spread at all yields nullopt so the caller can
/// apply its own fallback.
inline std::optional<double> silverman_bandwidth(const Eigen::Ref<const Eigen::VectorXd>& values) {
    if (values.size() < 2) return std::nullopt;
    const double sd = detail::sample_sd(values);
    std::vector<double> sorted(values.data(), values.data() + values.size());
    std::sort(sorted.begin(), sorted.end());
    const double iqr = detail::quantile_type7(sorted, 0.75) - detail::quantile_type7(sorted, 0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (spread <= 0.0) spread = sd;
    if (spread <= 0.0 || !std::isfinite(spread)) return std::nullopt;
    return kSilvermanFactor * spread * std::pow(static_cast<double>(values.size()), -0.2);
}

struct StateBandwidth {
    double value = 0.0;
    bool fallback = false;
};

/// Bandwidth for one state's KDE, computed on the hard-assigned pool. Falls
/// back to 1.06 * global_sd * global_n^(-1/5) when the pool is degenerate,
/// which keeps the component evaluable instead of aborting a fit.
inline StateBandwidth state_bandwidth(const Eigen::Ref<const Eigen::VectorXd>& pool,
                                      double global_sd, long global_n) {
    if (auto h = silverman_bandwidth(pool)) return {*h, false};
    detail::require(global_sd > 0.0 && global_n > 0,
                    "state_bandwidth: fallback needs a positive global scale");
    return {kFallbackBandwidthFactor * global_sd * std::pow(static_cast<double>(global_n), -0.2),
            true};
}

/// Weighted kernel density estimate at x:
/// (1/N_eff) * sum_r w_r * Gaussian_h(x_r - x).
inline double wkde_pdf(const KdeComponent& component, double x) {
    const double h = component.bandwidth;
    const auto& v = component.sample.values;
    const auto& w = component.sample.weights;
    const double s =
        (((v.array() - x) / h).square() * -0.5).exp().matrix().dot(w);
    return s / (component.effective_size * h * std::sqrt(2.0 * M_PI));
}

/// log wkde_pdf, evaluated stably so distant queries underflow gracefully
/// (-inf only when every kernel term is a true zero).
inline double wkde_log_pdf(const KdeComponent& component, double x) {
    const double h = component.bandwidth;
    const auto& v = component.sample.values;
    const auto& w = component.sample.weights;
    Eigen::ArrayXd arg = ((v.array() - x) / h).square() * -0.5;
    const double m = arg.maxCoeff();
    if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
    const double s = ((arg - m).exp() * w.array()).sum();
    if (s <= 0.0) return -std::numeric_limits<double>::infinity();
    return m + std::log(s) -
           std::log(component.effective_size * h * std::sqrt(2.0 * M_PI));
}

/// Mean of a symmetric-kernel wKDE: the weighted sample mean.
inline double wkde_mean(const KdeComponent& component) {
    return component.sample.values.dot(component.sample.weights) / component.effective_size;
}

/// Weighted variance of the sample around the weighted mean (kernel spread
/// not included).
inline double wkde_sample_variance(const KdeComponent& component) {
    const double m = wkde_mean(component);
    return (component.sample.values.array() - m)
               .square()
               .matrix()
               .dot(component.sample.weights) /
           component.effective_size;
}

/// Weighted mean and covariance of matrix rows, normalized by the total
/// weight. No regularization is applied here.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> weighted_moments(
    const Eigen::Ref<const Eigen::MatrixXd>& rows, const Eigen::Ref<const Eigen::VectorXd>& weights) {
    detail::require(rows.rows() == weights.size(), "weighted_moments: row/weight count mismatch");
    detail::require((weights.array() >= 0.0).all(), "weighted_moments: negative weight");
    const double total = weights.sum();
    detail::require(total > 0.0, "weighted_moments: total weight must be positive");
    Eigen::VectorXd mean = (rows.transpose() * weights) / total;
    Eigen::MatrixXd centered = rows.rowwise() - mean.transpose();
    Eigen::MatrixXd scaled = centered.array().colwise() * weights.array();
    Eigen::MatrixXd cov = (centered.transpose() * scaled) / total;
    cov = 0.5 * (cov + cov.transpose());  // enforce exact symmetry
    return {std::move(mean), std::move(cov)};
}

/// Ridge term added to every fitted covariance so that concentrated weight
/// columns cannot produce a singular matrix.
inline double covariance_ridge(const Eigen::MatrixXd& cov) {
    return std::max(kCovarianceRidgeFloor,
                    kCovarianceRidgeScale * cov.trace() / static_cast<double>(cov.rows()));
}

/// Weighted Gaussian fit of past-cone rows: weighted moments plus the ridge.
inline GaussianComponent fit_gaussian(const Eigen::Ref<const Eigen::MatrixXd>& rows,
                                      const Eigen::Ref<const Eigen::VectorXd>& weights) {
    detail::require(rows.rows() >= 2, "fit_gaussian: need at least two rows");
    auto [mean, cov] = weighted_moments(rows, weights);
    cov += covariance_ridge(cov) *
           Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
    return GaussianComponent(std::move(mean), std::move(cov));
}

/// Grid used to compare two component densities: fixed resolution over the
/// pooled sample range padded by a few bandwidths.
struct L1GridSpec {
    int points = 512;
    double pad_bandwidths = 3.0;
};

namespace detail {

struct EvalGrid {
    double lo = 0.0;
    double hi = 0.0;
    int points = 0;
    double step() const { return (hi - lo) / (points - 1); }
    double at(int k) const { return lo + step() * k; }
};

inline EvalGrid l1_grid(const KdeComponent& a, const KdeComponent& b, const L1GridSpec& spec) {
    const double lo = std::min(a.sample.values.minCoeff(), b.sample.values.minCoeff());
    const double hi = std::max(a.sample.values.maxCoeff(), b.sample.values.maxCoeff());
    const double pad = spec.pad_bandwidths * std::max(a.bandwidth, b.bandwidth);
    return {lo - pad, hi + pad, spec.points};
}

inline double trapezoid_abs_diff(const Eigen::VectorXd& fa, const Eigen::VectorXd& fb, double dx) {
    Eigen::ArrayXd d = (fa - fb).array().abs();
    const Eigen::Index n = d.size();
    return dx * (d.segment(1, n - 2).sum() + 0.5 * (d(0) + d(n - 1)));
}

}  // namespace detail

/// Trapezoidal approximation of the L1 distance between two component
/// densities on the shared padded grid. Symmetric, and zero exactly when the
/// densities agree at every grid point.
inline double l1_distance(const KdeComponent& a, const KdeComponent& b,
                          const L1GridSpec& spec = {}) {
    detail::require(spec.points >= 8, "l1_distance: grid too small");
    const auto grid = detail::l1_grid(a, b, spec);
    Eigen::VectorXd fa(grid.points), fb(grid.points);
    for (int k = 0; k < grid.points; ++k) {
        const double x = grid.at(k);
        fa(k) = wkde_pdf(a, x);
        fb(k) = wkde_pdf(b, x);
    }
    return detail::trapezoid_abs_diff(fa, fb, grid.step());
}

}  // namespace statecast
