#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "statecast/field.hpp"
#include "statecast/model.hpp"

namespace statecast {

namespace detail {

// Past-cone observability for rolling forecasts (future side not required).
inline bool plc_observed(int r, int t, const FieldGeometry& g) {
    if (t - g.past_horizon < 1) return false;
    if (g.boundary == Boundary::truncate) {
        const int reach = g.speed * g.past_horizon;
        if (r - reach < 1 || r + reach > g.spatial_size) return false;
    }
    return true;
}

inline void fill_plc_row(const Eigen::MatrixXd& values, const FieldGeometry& g, int r, int t,
                         Eigen::MatrixXd& dest, Eigen::Index dest_row) {
    int col = 0;
    for (int s = g.past_horizon; s >= 1; --s) {
        for (int o = -g.speed * s; o <= g.speed * s; ++o) {
            dest(dest_row, col++) = values(wrap_site(r + o, g.spatial_size) - 1, t - s - 1);
        }
    }
}

}  // namespace detail

/// Unnormalized log mixture weights for a batch of past cones: per state,
/// Gaussian log-density of the cone plus the log prior. One row per cone.
inline Eigen::MatrixXd batched_plc_log_weights(const StateEnsemble& ensemble,
                                               const Eigen::Ref<const Eigen::MatrixXd>& plcs) {
    const int k = ensemble.state_count();
    Eigen::MatrixXd logw(plcs.rows(), k);
    for (int j = 0; j < k; ++j) {
        logw.col(j) = ensemble.states[static_cast<std::size_t>(j)].plc_model.log_pdf_rows(plcs);
        logw.col(j).array() += std::log(ensemble.states[static_cast<std::size_t>(j)].prior);
    }
    return logw;
}

/// In-place log-sum-exp row normalization of log weights into probabilities.
/// Rows whose every entry underflows become uniform; returns how many did.
inline int normalize_log_rows(Eigen::MatrixXd& logw) {
    const double uniform = 1.0 / static_cast<double>(logw.cols());
    Eigen::VectorXd rowmax = logw.rowwise().maxCoeff();
    for (Eigen::Index i = 0; i < rowmax.size(); ++i)
        if (!std::isfinite(rowmax(i))) rowmax(i) = 0.0;  // row will come out all-zero
    logw = (logw.colwise() - rowmax).array().exp();
    Eigen::VectorXd sums = logw.rowwise().sum();
    int underflowed = 0;
    for (Eigen::Index i = 0; i < logw.rows(); ++i) {
        if (sums(i) > 0.0 && std::isfinite(sums(i))) {
            logw.row(i) /= sums(i);
        } else {
            logw.row(i).setConstant(uniform);
            ++underflowed;
        }
    }
    return underflowed;
}

/// Mixture weights over states for a new past cone, conditioning on the cone
/// only (not on the value to be predicted). Normalized in log space.
inline Eigen::VectorXd plc_state_weights(const StateEnsemble& ensemble,
                                         const Eigen::Ref<const Eigen::VectorXd>& plc) {
    Eigen::MatrixXd logw = batched_plc_log_weights(ensemble, plc.transpose());
    normalize_log_rows(logw);
    return logw.row(0).transpose();
}

/// Predictive density of the next value at a new past cone: the state-weight
/// mixture of the per-state KDEs.
inline double predictive_pdf(const StateEnsemble& ensemble,
                             const Eigen::Ref<const Eigen::VectorXd>& plc, double x) {
    const Eigen::VectorXd w = plc_state_weights(ensemble, plc);
    double p = 0.0;
    for (int j = 0; j < ensemble.state_count(); ++j)
        p += w(j) * wkde_pdf(ensemble.states[static_cast<std::size_t>(j)].flc_model, x);
    return p;
}

/// Per-state KDE means, the building block of point forecasts.
inline Eigen::VectorXd state_means(const StateEnsemble& ensemble) {
    Eigen::VectorXd means(ensemble.state_count());
    for (int j = 0; j < ensemble.state_count(); ++j)
        means(j) = wkde_mean(ensemble.states[static_cast<std::size_t>(j)].flc_model);
    return means;
}

/// Point forecasts for a batch of past cones under the chosen rule.
inline Eigen::VectorXd point_forecast_rows(const StateEnsemble& ensemble,
                                           const Eigen::Ref<const Eigen::MatrixXd>& plcs,
                                           ForecastRule rule = ForecastRule::weighted_mixture) {
    Eigen::MatrixXd w = batched_plc_log_weights(ensemble, plcs);
    normalize_log_rows(w);
    const Eigen::VectorXd means = state_means(ensemble);
    if (rule == ForecastRule::weighted_mixture) return w * means;
    Eigen::VectorXd out(w.rows());
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        Eigen::Index best = 0;
        w.row(i).maxCoeff(&best);
        out(i) = means(best);
    }
    return out;
}

/// Mixture-weighted mean forecast for one past cone.
inline double point_forecast(const StateEnsemble& ensemble,
                             const Eigen::Ref<const Eigen::VectorXd>& plc) {
    return point_forecast_rows(ensemble, plc.transpose())(0);
}

/// Weighted predictive mixture at one past cone; the components live in the
/// ensemble, only the weights depend on the query.
struct PredictiveMixture {
    Eigen::VectorXd state_weights;
    const StateEnsemble* ensemble = nullptr;

    double pdf(double x) const {
        double p = 0.0;
        for (int j = 0; j < ensemble->state_count(); ++j)
            p += state_weights(j) * wkde_pdf(ensemble->states[static_cast<std::size_t>(j)].flc_model, x);
        return p;
    }

    double mean() const { return state_weights.dot(state_means(*ensemble)); }
};

inline PredictiveMixture predictive_mixture(const StateEnsemble& ensemble,
                                            const Eigen::Ref<const Eigen::VectorXd>& plc) {
    return {plc_state_weights(ensemble, plc), &ensemble};
}

namespace detail {

inline void check_plc_dim(const ModelArtifact& model, Eigen::Index dim) {
    require(dim == plc_dimension(model.geometry),
            "forecast: past-cone dimension does not match the model geometry");
}

}  // namespace detail

inline Eigen::VectorXd plc_state_weights(const ModelArtifact& model,
                                         const Eigen::Ref<const Eigen::VectorXd>& plc) {
    detail::check_plc_dim(model, plc.size());
    return plc_state_weights(model.ensemble, plc);
}

inline double predictive_pdf(const ModelArtifact& model,
                             const Eigen::Ref<const Eigen::VectorXd>& plc, double x) {
    detail::check_plc_dim(model, plc.size());
    return predictive_pdf(model.ensemble, plc, x);
}

inline double point_forecast(const ModelArtifact& model,
                             const Eigen::Ref<const Eigen::VectorXd>& plc) {
    detail::check_plc_dim(model, plc.size());
    return point_forecast(model.ensemble, plc);
}

/// Rolls a field forward `steps` time slices by writing the point forecast at
/// every site of the next slice and feeding the extended field back in. A
/// deterministic extension; stochastic rollouts live in the dynamics module.
/// Sites whose past cone is incomplete (truncate boundary only) receive the
/// prior-weighted mixture mean.
inline Field forecast_field(const ModelArtifact& model, const Field& prefix, int steps) {
    prefix.validate();
    detail::require(steps >= 0, "forecast_field: steps must be non-negative");
    detail::require(prefix.geometry.cone_compatible(model.geometry),
                    "forecast_field: prefix cone geometry does not match the model");
    const int hp = model.geometry.past_horizon;
    detail::require(prefix.geometry.time_steps >= hp,
                    "forecast_field: prefix must cover at least past_horizon time slices");

    Field out;
    out.geometry = prefix.geometry;
    out.geometry.time_steps += steps;
    out.values.resize(prefix.geometry.spatial_size, out.geometry.time_steps);
    out.values.leftCols(prefix.geometry.time_steps) = prefix.values;
    if (steps == 0) return out;

    const int s_count = out.geometry.spatial_size;
    const int d = plc_dimension(model.geometry);
    double margin_forecast = 0.0;
    if (out.geometry.boundary == Boundary::truncate) {
        Eigen::VectorXd priors(model.ensemble.state_count());
        for (int j = 0; j < model.ensemble.state_count(); ++j)
            priors(j) = model.ensemble.states[static_cast<std::size_t>(j)].prior;
        margin_forecast = priors.dot(state_means(model.ensemble));
    }

    Eigen::MatrixXd plcs(s_count, d);
    for (int t = prefix.geometry.time_steps + 1; t <= out.geometry.time_steps; ++t) {
        std::vector<int> sites;
        sites.reserve(static_cast<std::size_t>(s_count));
        for (int r = 1; r <= s_count; ++r) {
            if (detail::plc_observed(r, t, out.geometry)) {
                detail::fill_plc_row(out.values, out.geometry, r, t, plcs,
                                     static_cast<Eigen::Index>(sites.size()));
                sites.push_back(r);
            } else {
                out.values(r - 1, t - 1) = margin_forecast;
            }
        }
        const Eigen::VectorXd forecasts = point_forecast_rows(
            model.ensemble, plcs.topRows(static_cast<Eigen::Index>(sites.size())));
        for (std::size_t i = 0; i < sites.size(); ++i)
            out.values(sites[i] - 1, t - 1) = forecasts(static_cast<Eigen::Index>(i));
    }
    return out;
}

/// One-step forecasts over every fully observed cell of a field, with the
/// residual field and summary mean squared error. Margin cells carry the
/// observed value in the forecast (residual zero) so both outputs keep the
/// field shape.
struct OneStepForecast {
    Field forecast;
    Field residual;
    double mse = 0.0;
    long cells = 0;
};

inline OneStepForecast one_step_forecast(const ModelArtifact& model, const Field& field) {
    field.validate();
    detail::require(field.geometry.cone_compatible(model.geometry),
                    "one_step_forecast: field cone geometry does not match the model");
    const LightConeSet cones = extract_light_cones(field);
    detail::require(cones.rows() > 0, "one_step_forecast: field has no fully observed cones");

    OneStepForecast out;
    out.forecast.geometry = field.geometry;
    out.forecast.values = field.values;
    out.residual.geometry = field.geometry;
    out.residual.values = Eigen::MatrixXd::Zero(field.values.rows(), field.values.cols());

    const Eigen::VectorXd forecasts = point_forecast_rows(model.ensemble, cones.plc);
    double sq_sum = 0.0;
    for (Eigen::Index i = 0; i < cones.rows(); ++i) {
        const auto [r, t] = cones.index_map[static_cast<std::size_t>(i)];
        const double observed = field.values(r - 1, t - 1);
        out.forecast.values(r - 1, t - 1) = forecasts(i);
        out.residual.values(r - 1, t - 1) = observed - forecasts(i);
        sq_sum += (observed - forecasts(i)) * (observed - forecasts(i));
    }
    out.cells = cones.rows();
    out.mse = sq_sum / static_cast<double>(cones.rows());
    return out;
}

}  // namespace statecast
