#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "statecast/density.hpp"
#include "statecast/field.hpp"

namespace statecast {

inline constexpr double kRowStochasticTolerance = 1e-12;
inline constexpr int kModelFormatVersion = 1;

/// Row-stochastic N x K matrix; row i is the soft state assignment of light
/// cone i, the randomized version of the cone-to-state mapping.
struct WeightMatrix {
    Eigen::MatrixXd entries;

    Eigen::Index rows() const { return entries.rows(); }
    int state_count() const { return static_cast<int>(entries.cols()); }

    void validate(double tol = kRowStochasticTolerance) const {
        detail::ensure(entries.cols() >= 1, "weight matrix: needs at least one state");
        detail::ensure(entries.allFinite(), "weight matrix: non-finite entry");
        detail::ensure((entries.array() >= 0.0).all(), "weight matrix: negative entry");
        for (Eigen::Index i = 0; i < entries.rows(); ++i) {
            if (std::abs(entries.row(i).sum() - 1.0) > tol)
                throw InternalError("weight matrix: row " + std::to_string(i) +
                                    " is not stochastic");
        }
    }
};

/// Fitted summaries of one predictive state: a Gaussian over past cones, a
/// weighted KDE over future-cone values, and the state's share of the data.
struct ModelState {
    GaussianComponent plc_model;
    KdeComponent flc_model;
    double prior = 0.0;
    double effective_size = 0.0;
    bool bandwidth_fallback = false;
    bool dead = false;  // effective mass below the floor; force-merged by the engine
};

struct StateEnsemble {
    std::vector<ModelState> states;

    int state_count() const { return static_cast<int>(states.size()); }

    void validate(double tol = kRowStochasticTolerance) const {
        detail::ensure(!states.empty(), "ensemble: empty");
        double prior_sum = 0.0;
        for (const auto& s : states) prior_sum += s.prior;
        detail::ensure(std::abs(prior_sum - 1.0) <= tol * states.size() + tol,
                       "ensemble: priors do not sum to 1");
    }
};

/// One column merge: `from` was folded into `into` (indices as they were
/// before the removal). Forced merges absorb states whose mass fell below
/// the floor; regular merges pick the closest pair by L1 distance.
struct MergeRecord {
    int into = 0;
    int from = 0;
    double distance = 0.0;
    bool forced = false;
};

/// Per-iteration diagnostics of one EM chain.
struct IterationRecord {
    int run = 0;
    int iteration = 0;  // cumulative across merges within the run
    int state_count = 0;
    double log_likelihood = 0.0;  // expected future-cone log-likelihood
    double train_mse = 0.0;
    double test_mse = 0.0;
    double weight_delta = 0.0;  // ||W_n - W_{n-1}||_F / sqrt(N)
    std::vector<MergeRecord> merges;  // applied after this iteration's evaluation
    int bandwidth_fallbacks = 0;
    int underflow_rows = 0;
};

struct FitTrace {
    std::vector<IterationRecord> iterations;
};

enum class InitMode { kmeanspp, random };

/// Which point forecast a prediction uses: the mixture-weighted mean across
/// states, or the mean of the single highest-weight state.
enum class ForecastRule { weighted_mixture, max_weight };

/// Fit configuration. Defaults reproduce the reference experiment; `jobs`
/// only controls chain-level parallelism and never affects results.
struct EmConfig {
    int k_max = 15;
    double delta = 1e-3;  // convergence threshold on ||dW||_F / sqrt(N)
    int max_iterations = 1000;
    int n_runs = 10;
    std::uint64_t seed = 0;
    bool hard_assignment = false;
    double mass_floor = 1.0;  // effective mass below this marks a state dead
    long exact_kde_row_limit = 512;  // exact KDE sums at or below; grid evaluator above
    bool selection_conditions_on_flc = false;  // evaluate test MSE with FLC-conditioned weights
    bool validate_invariants = true;
    int jobs = 1;

    void validate() const {
        if (k_max < 1) throw ConfigError("k_max must be at least 1");
        if (!(delta > 0.0)) throw ConfigError("delta must be positive");
        if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
        if (n_runs < 1) throw ConfigError("n_runs must be at least 1");
        if (mass_floor < 0.0) throw ConfigError("mass_floor must be non-negative");
        if (jobs < 0) throw ConfigError("jobs must be non-negative");
    }
};

/// A completed fit: the selected weight matrix and ensemble, everything
/// needed to forecast and simulate, and the full diagnostic trace.
struct ModelArtifact {
    int format_version = kModelFormatVersion;
    FieldGeometry geometry;
    EmConfig config;
    WeightMatrix weights;          // W*, the selected soft assignment
    StateEnsemble ensemble;        // components fitted at W*
    Eigen::VectorXd train_flc;     // training future-cone values
    FitTrace trace;
    std::uint64_t seed = 0;
    double best_test_mse = 0.0;
    int best_run = 0;
    int best_iteration = 0;
    bool truncated = false;  // some run hit max_iterations before reaching K = 1

    int state_count() const { return ensemble.state_count(); }
};

}  // namespace statecast
