#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <random>

#include "statecast/field.hpp"
#include "statecast/forecast.hpp"
#include "statecast/model.hpp"
#include "statecast/rng.hpp"

namespace statecast {

enum class InitialCondition { zeros, patches };

inline std::string to_string(InitialCondition ic) {
    return ic == InitialCondition::zeros ? "zeros" : "patches";
}

inline InitialCondition initial_condition_from_string(const std::string& s) {
    if (s == "zeros") return InitialCondition::zeros;
    if (s == "patches") return InitialCondition::patches;
    throw ConfigError("unknown initial condition: '" + s + "' (expected zeros or patches)");
}

/// Configuration of the test system: a (1+1)D conditional-Gaussian cellular
/// automaton on a ring. The burn-in window is simulated and discarded so the
/// returned realization does not depend on the initial slices.
struct CaConfig {
    int spatial_size = 100;
    int time_steps = 200;
    int burn_in = 100;
    InitialCondition initial = InitialCondition::zeros;
    bool first_patch_positive = true;  // sign of the leading +/-3 patch block
    int patch_width = 10;
    std::optional<Eigen::MatrixXd> custom_initial;  // spatial_size x 2, overrides `initial`
    std::uint64_t seed = 0;

    void validate() const {
        // The 5-site window of the latent rule must not overlap itself.
        if (spatial_size < 11) throw ConfigError("ca: spatial_size must be at least 11");
        if (time_steps < 1) throw ConfigError("ca: time_steps must be at least 1");
        if (burn_in < 0) throw ConfigError("ca: burn_in must be non-negative");
        if (patch_width < 1) throw ConfigError("ca: patch_width must be at least 1");
        if (custom_initial &&
            (custom_initial->rows() != spatial_size || custom_initial->cols() != 2))
            throw ConfigError("ca: custom initial slices must be spatial_size x 2");
    }

    /// Geometry of emitted realizations. The generating rule reads two past
    /// slices at speed one and the value itself, hence these cone parameters.
    FieldGeometry field_geometry() const {
        return {spatial_size, time_steps, Boundary::periodic, 1, 2, 0};
    }
};

namespace detail {

inline double circular_mean(const Eigen::MatrixXd& values, int r, int t, int half_width) {
    const int s_count = static_cast<int>(values.rows());
    double sum = 0.0;
    for (int o = -half_width; o <= half_width; ++o)
        sum += values(wrap_site(r + o, s_count) - 1, t - 1);
    return sum / static_cast<double>(2 * half_width + 1);
}

inline int latent_state_at(const Eigen::MatrixXd& values, int r, int t) {
    const double diff =
        circular_mean(values, r, t - 2, 2) - circular_mean(values, r, t - 1, 1);
    // Nearest integer, ties away from zero.
    return static_cast<int>(std::lround(diff));
}

inline double conditional_mean(int d) { return std::abs(d) < 4 ? static_cast<double>(d) : 0.0; }

}  // namespace detail

/// Latent state of the test system at (r, t): the rounded difference between
/// the mean of the 5 nearest sites two steps back and the mean of the 3
/// nearest sites one step back, indices wrapping around the ring. Rounding is
/// to the nearest integer with ties away from zero.
inline int latent_state(const Field& field, int r, int t) {
    detail::require(r >= 1 && r <= field.geometry.spatial_size, "latent_state: site out of range");
    detail::require(t >= 3 && t <= field.geometry.time_steps,
                    "latent_state: need two past slices (t >= 3)");
    return detail::latent_state_at(field.values, r, t);
}

/// The 7-state clamp of a latent value: |d| < 4 keeps d, anything farther
/// behaves exactly like state 0.
inline int predictive_state_of(int d) { return std::abs(d) < 4 ? d : 0; }

/// Draws time slice t of the true dynamics: per site, compute the latent
/// state d and draw from Normal(d, 1) when |d| < 4, Normal(0, 1) otherwise.
/// Per-site generator streams are derived from (seed, t, r), so slices are
/// reproducible and trivially parallel.
inline Eigen::VectorXd step_true(const Eigen::MatrixXd& history, int t, std::uint64_t seed) {
    detail::require(t >= 3, "step_true: need two past slices (t >= 3)");
    detail::require(history.cols() >= t - 1, "step_true: history does not reach slice t-1");
    const int s_count = static_cast<int>(history.rows());
    Eigen::VectorXd slice(s_count);
    for (int r = 1; r <= s_count; ++r) {
        const int d = detail::latent_state_at(history, r, t);
        Rng rng = make_rng(derive_seed(seed, {stream::kCell, static_cast<std::uint64_t>(t),
                                              static_cast<std::uint64_t>(r)}));
        std::normal_distribution<double> draw(detail::conditional_mean(d), 1.0);
        slice(r - 1) = draw(rng);
    }
    return slice;
}

/// One realization of the test system together with its latent state field,
/// both covering the post-burn-in window. Latent values need two past slices;
/// the first two columns hold zeros when burn_in < 2 leaves them undefined.
struct CaRealization {
    Field observed;
    Eigen::MatrixXi latent;
};

inline CaRealization simulate_true(const CaConfig& config) {
    config.validate();
    const int s_count = config.spatial_size;
    const int total = config.burn_in + config.time_steps;
    detail::require(total >= 2, "simulate_true: need at least two time slices overall");

    Eigen::MatrixXd values(s_count, total);
    if (config.custom_initial) {
        values.leftCols(2) = *config.custom_initial;
    } else if (config.initial == InitialCondition::zeros) {
        values.leftCols(2).setZero();
    } else {
        values.col(0).setConstant(-1.0);
        for (int r = 1; r <= s_count; ++r) {
            const int block = (r - 1) / config.patch_width;
            const bool positive = (block % 2 == 0) == config.first_patch_positive;
            values(r - 1, 1) = positive ? 3.0 : -3.0;
        }
    }
    for (int t = 3; t <= total; ++t) values.col(t - 1) = step_true(values, t, config.seed);

    CaRealization out;
    out.observed.geometry = config.field_geometry();
    out.observed.values = values.rightCols(config.time_steps);
    out.latent = Eigen::MatrixXi::Zero(s_count, config.time_steps);
    for (int t = 1; t <= config.time_steps; ++t) {
        const int absolute_t = config.burn_in + t;
        if (absolute_t < 3) continue;
        for (int r = 1; r <= s_count; ++r)
            out.latent(r - 1, t - 1) = detail::latent_state_at(values, r, absolute_t);
    }
    return out;
}

/// Simulates a new realization from a fitted model: per time step and site,
/// sample a state from the past-cone mixture weights, then draw a value from
/// that state's KDE by kernel-smoothed bootstrap (pick a training sample with
/// probability proportional to its weight, add Gaussian noise of the state's
/// bandwidth). The returned field holds the initial slices followed by t_max
/// generated slices.
inline Field simulate_from_model(const ModelArtifact& model,
                                 const Eigen::Ref<const Eigen::MatrixXd>& initial_slices,
                                 int t_max, std::uint64_t seed) {
    detail::require(t_max >= 0, "simulate_from_model: t_max must be non-negative");
    detail::require(model.geometry.future_horizon == 0,
                    "simulate_from_model: model must have future_horizon 0");
    const int hp = model.geometry.past_horizon;
    detail::require(initial_slices.cols() == hp,
                    "simulate_from_model: initial slices must cover past_horizon time steps");
    const int s_count = static_cast<int>(initial_slices.rows());

    Field out;
    out.geometry = model.geometry;
    out.geometry.spatial_size = s_count;
    out.geometry.time_steps = hp + t_max;
    out.geometry.validate();
    out.values.resize(s_count, hp + t_max);
    out.values.leftCols(hp) = initial_slices;

    const int k = model.ensemble.state_count();
    // Per-state cumulative sample weights for bootstrap index draws.
    std::vector<Eigen::VectorXd> cumulative(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        const Eigen::VectorXd& w = model.ensemble.states[static_cast<std::size_t>(j)].flc_model.sample.weights;
        Eigen::VectorXd cum(w.size());
        double acc = 0.0;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            acc += w(i);
            cum(i) = acc;
        }
        cumulative[static_cast<std::size_t>(j)] = std::move(cum);
    }

    Eigen::VectorXd priors(k);
    for (int j = 0; j < k; ++j) priors(j) = model.ensemble.states[static_cast<std::size_t>(j)].prior;

    const int d_plc = plc_dimension(out.geometry);
    Eigen::MatrixXd plcs(s_count, d_plc);
    for (int t = hp + 1; t <= out.geometry.time_steps; ++t) {
        std::vector<int> with_cone;
        with_cone.reserve(static_cast<std::size_t>(s_count));
        for (int r = 1; r <= s_count; ++r) {
            if (detail::plc_observed(r, t, out.geometry)) {
                detail::fill_plc_row(out.values, out.geometry, r, t, plcs,
                                     static_cast<Eigen::Index>(with_cone.size()));
                with_cone.push_back(r);
            }
        }
        Eigen::MatrixXd weights = batched_plc_log_weights(
            model.ensemble, plcs.topRows(static_cast<Eigen::Index>(with_cone.size())));
        normalize_log_rows(weights);

        std::size_t next = 0;
        for (int r = 1; r <= s_count; ++r) {
            Rng rng = make_rng(derive_seed(seed, {stream::kCell, static_cast<std::uint64_t>(t),
                                                  static_cast<std::uint64_t>(r)}));
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            Eigen::VectorXd state_weights;
            if (next < with_cone.size() && with_cone[next] == r) {
                state_weights = weights.row(static_cast<Eigen::Index>(next)).transpose();
                ++next;
            } else {
                state_weights = priors;  // truncate boundary: no full cone at this site
            }
            // Draw the state by inverse CDF.
            const double u_state = unit(rng) * state_weights.sum();
            int state = k - 1;
            double acc = 0.0;
            for (int j = 0; j < k; ++j) {
                acc += state_weights(j);
                if (acc > u_state) {
                    state = j;
                    break;
                }
            }
            const ModelState& chosen = model.ensemble.states[static_cast<std::size_t>(state)];
            const Eigen::VectorXd& cum = cumulative[static_cast<std::size_t>(state)];
            const double u_index = unit(rng) * cum(cum.size() - 1);
            const Eigen::Index pick = std::upper_bound(cum.data(), cum.data() + cum.size(),
                                                       u_index) -
                                      cum.data();
            const Eigen::Index idx = std::min(pick, cum.size() - 1);
            std::normal_distribution<double> noise(0.0, 1.0);
            out.values(r - 1, t - 1) =
                chosen.flc_model.sample.values(idx) + chosen.flc_model.bandwidth * noise(rng);
        }
    }
    return out;
}

}  // namespace statecast
