#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <semaphore>
#include <thread>
#include <utility>
#include <vector>

#include "statecast/density.hpp"
#include "statecast/detail/kde_grid.hpp"
#include "statecast/field.hpp"
#include "statecast/forecast.hpp"
#include "statecast/model.hpp"
#include "statecast/rng.hpp"

namespace statecast {

/// Density floor for log-likelihood accumulation: keeps trace values finite
/// when a point sits in a region a component assigns zero mass to.
inline const double kLogDensityFloor = std::log(std::numeric_limits<double>::denorm_min());

namespace detail {

inline constexpr double kTinyEffectiveMass = 1e-12;

inline void require_scalar_flc(const LightConeSet& cones) {
    require(cones.flc.cols() == 1,
            "engine: fitting requires scalar future cones (future_horizon = 0)");
    require(cones.rows() > 0, "engine: empty light-cone set");
}

// First column index of the row maximum; ties break toward the lowest state.
inline Eigen::Index argmax_row(const Eigen::MatrixXd& m, Eigen::Index i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < m.cols(); ++j)
        if (m(i, j) > m(i, best)) best = j;
    return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

inline std::vector<int> kmeanspp_labels(const Eigen::MatrixXd& points, int k, Rng& rng) {
    const Eigen::Index n = points.rows();
    const Eigen::Index d = points.cols();
    Eigen::MatrixXd centers(k, d);
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centers.row(0) = points.row(first(rng));

    Eigen::VectorXd dist2 =
        (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int j = 1; j < k; ++j) {
        const double total = dist2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            const double u = unit(rng) * total;
            double cum = 0.0;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                cum += dist2(i);
                if (cum > u) {
                    pick = i;
                    break;
                }
            }
        } else {
            // All remaining points coincide with existing centers; reuse rows
            // in order. The resulting duplicate states die in the first
            // M-step and get force-merged.
            pick = j % n;
        }
        centers.row(j) = points.row(pick);
        dist2 = dist2.cwiseMin(
            (points.rowwise() - centers.row(j)).rowwise().squaredNorm());
    }

    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    Eigen::VectorXd point_sq = points.rowwise().squaredNorm();
    for (int round = 0; round < 100; ++round) {
        // Assignment step; ties go to the lowest cluster index.
        Eigen::MatrixXd cross = points * centers.transpose();
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                const double dist =
                    point_sq(i) - 2.0 * cross(i, j) + centers.row(j).squaredNorm();
                if (dist < best_d) {
                    best_d = dist;
                    best = j;
                }
            }
            if (labels[static_cast<std::size_t>(i)] != best) {
                labels[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        // Reseed empty clusters at the point farthest from its center.
        std::vector<long> counts(static_cast<std::size_t>(k), 0);
        for (int label : labels) ++counts[static_cast<std::size_t>(label)];
        for (int j = 0; j < k; ++j) {
            if (counts[static_cast<std::size_t>(j)] > 0) continue;
            Eigen::Index far = 0;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const int lj = labels[static_cast<std::size_t>(i)];
                if (counts[static_cast<std::size_t>(lj)] <= 1) continue;
                const double dist =
                    (points.row(i) - centers.row(lj)).squaredNorm();
                if (dist > far_d) {
                    far_d = dist;
                    far = i;
                }
            }
            if (far_d < 0.0) break;  // nothing movable (duplicate-heavy data)
            --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
            labels[static_cast<std::size_t>(far)] = j;
            ++counts[static_cast<std::size_t>(j)];
            changed = true;
        }
        // Mean update.
        centers.setZero();
        for (Eigen::Index i = 0; i < n; ++i)
            centers.row(labels[static_cast<std::size_t>(i)]) += points.row(i);
        for (int j = 0; j < k; ++j)
            if (counts[static_cast<std::size_t>(j)] > 0)
                centers.row(j) /= static_cast<double>(counts[static_cast<std::size_t>(j)]);
        if (!changed) break;
    }
    return labels;
}

}  // namespace detail

/// Initial hard state assignment as a one-hot weight matrix: k-means++
/// seeding plus Lloyd iterations on the past-cone rows, or uniform random
/// states.
inline WeightMatrix init_weights(const LightConeSet& cones, int k_max, InitMode mode,
                                 std::uint64_t seed) {
    detail::require(cones.rows() > 0, "init_weights: empty light-cone set");
    detail::require(k_max >= 1, "init_weights: k_max must be at least 1");
    detail::require(k_max <= cones.rows(), "init_weights: k_max exceeds the number of cones");

    const Eigen::Index n = cones.rows();
    Rng rng = make_rng(seed);
    std::vector<int> labels;
    if (mode == InitMode::kmeanspp) {
        labels = detail::kmeanspp_labels(cones.plc, k_max, rng);
    } else {
        std::uniform_int_distribution<int> pick(0, k_max - 1);
        labels.resize(static_cast<std::size_t>(n));
        for (auto& label : labels) label = pick(rng);
    }
    WeightMatrix w;
    w.entries = Eigen::MatrixXd::Zero(n, k_max);
    for (Eigen::Index i = 0; i < n; ++i)
        w.entries(i, labels[static_cast<std::size_t>(i)]) = 1.0;
    return w;
}

// ---------------------------------------------------------------------------
// M-step

/// Fits per-state components from the current soft assignment: a weighted
/// Gaussian over past cones, a weighted KDE over future-cone values with the
/// bandwidth chosen on the hard-assigned pool, and the prior mass. States
/// whose effective mass falls below `mass_floor` are flagged dead; the fit
/// loop force-merges them. A state with essentially zero mass gets uniform
/// placeholder components so the ensemble stays well-formed until that merge.
inline StateEnsemble build_ensemble(const LightConeSet& cones, const WeightMatrix& weights,
                                    double mass_floor = 1.0) {
    detail::require_scalar_flc(cones);
    detail::require(weights.rows() == cones.rows(),
                    "build_ensemble: weight rows do not match cone rows");
    const Eigen::Index n = cones.rows();
    const int k = weights.state_count();
    const Eigen::VectorXd flc = cones.flc.col(0);

    double global_sd = detail::sample_sd(flc);
    if (!(global_sd > 0.0)) global_sd = 1.0;  // constant data; any positive scale works

    // Hard-assigned bandwidth pools.
    std::vector<std::vector<double>> pools(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index j = detail::argmax_row(weights.entries, i);
        pools[static_cast<std::size_t>(j)].push_back(flc(i));
    }

    StateEnsemble ensemble;
    ensemble.states.reserve(static_cast<std::size_t>(k));
    const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    for (int j = 0; j < k; ++j) {
        const Eigen::VectorXd& col = weights.entries.col(j);
        const double mass = col.sum();
        const bool placeholder = mass <= detail::kTinyEffectiveMass;
        const Eigen::VectorXd& fit_weights = placeholder ? uniform : col;

        const auto& pool_vec = pools[static_cast<std::size_t>(j)];
        const Eigen::Map<const Eigen::VectorXd> pool(pool_vec.data(),
                                                     static_cast<Eigen::Index>(pool_vec.size()));
        const StateBandwidth bw = state_bandwidth(pool, global_sd, n);

        KdeComponent kde{WeightedSample1D{flc, fit_weights}, bw.value, fit_weights.sum()};
        ModelState state{fit_gaussian(cones.plc, fit_weights), std::move(kde),
                         mass / static_cast<double>(n), fit_weights.sum(), bw.fallback,
                         mass < mass_floor};
        ensemble.states.push_back(std::move(state));
    }
    return ensemble;
}

// ---------------------------------------------------------------------------
// E-step

namespace detail {

// Log wKDE density of each query under each state. Exact stable sums at or
// below the row limit, the binned-FFT evaluator above it.
inline Eigen::MatrixXd flc_log_density_matrix(const Eigen::Ref<const Eigen::VectorXd>& queries,
                                              const StateEnsemble& ensemble, long exact_limit) {
    const Eigen::Index n = queries.size();
    const int k = ensemble.state_count();
    Eigen::MatrixXd logf(n, k);
    const bool exact =
        std::max<long>(n, ensemble.states.front().flc_model.sample.values.size()) <= exact_limit;
    for (int j = 0; j < k; ++j) {
        const KdeComponent& kde = ensemble.states[static_cast<std::size_t>(j)].flc_model;
        if (exact) {
            for (Eigen::Index i = 0; i < n; ++i) logf(i, j) = wkde_log_pdf(kde, queries(i));
        } else {
            WkdeGridEvaluator eval(kde.sample.values, kde.sample.weights, kde.bandwidth);
            for (Eigen::Index i = 0; i < n; ++i) logf(i, j) = eval.log_pdf(queries(i));
        }
    }
    return logf;
}

struct EStepOptions {
    long exact_row_limit = 512;
    bool hard = false;
};

struct EStepResult {
    WeightMatrix weights;
    int underflow_rows = 0;
    double flc_log_likelihood = 0.0;
};

inline EStepResult e_step_impl(const LightConeSet& cones, const StateEnsemble& ensemble,
                               const EStepOptions& options) {
    require_scalar_flc(cones);
    const Eigen::Index n = cones.rows();
    const int k = ensemble.state_count();

    Eigen::MatrixXd logf =
        flc_log_density_matrix(cones.flc.col(0), ensemble, options.exact_row_limit);
    Eigen::MatrixXd logw = logf;
    for (int j = 0; j < k; ++j) {
        const ModelState& s = ensemble.states[static_cast<std::size_t>(j)];
        logw.col(j) += s.plc_model.log_pdf_rows(cones.plc);
        logw.col(j).array() += std::log(s.prior);
    }

    EStepResult result;
    result.underflow_rows = normalize_log_rows(logw);
    if (options.hard) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index best = argmax_row(logw, i);
            logw.row(i).setZero();
            logw(i, best) = 1.0;
        }
    }
    double loglik = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            const double wij = logw(i, j);
            if (wij > 0.0) loglik += wij * std::max(logf(i, j), kLogDensityFloor);
        }
    }
    result.flc_log_likelihood = loglik;
    result.weights.entries = std::move(logw);
    return result;
}

}  // namespace detail

/// One E-step: per cone, posterior state probabilities proportional to
/// (future-cone KDE density) x (past-cone Gaussian density) x (state prior),
/// combined in log space and normalized per row by log-sum-exp. Rows whose
/// every factor underflows become uniform.
inline WeightMatrix e_step(const LightConeSet& cones, const StateEnsemble& ensemble,
                           long exact_row_limit = 512) {
    return detail::e_step_impl(cones, ensemble, {exact_row_limit, false}).weights;
}

// ---------------------------------------------------------------------------
// Diagnostics and selection

/// Expected future-cone log-likelihood under the soft assignment:
/// sum_i sum_j w_ij * log f(x_i | state j). Exact sums; intended for trace
/// values and small-scale checks (cost grows as rows^2 * states).
inline double approx_loglik(const LightConeSet& cones, const WeightMatrix& weights,
                            const StateEnsemble& ensemble) {
    detail::require_scalar_flc(cones);
    detail::require(weights.rows() == cones.rows(), "approx_loglik: shape mismatch");
    detail::require(weights.state_count() == ensemble.state_count(),
                    "approx_loglik: state count mismatch");
    double total = 0.0;
    for (int j = 0; j < ensemble.state_count(); ++j) {
        const KdeComponent& kde = ensemble.states[static_cast<std::size_t>(j)].flc_model;
        for (Eigen::Index i = 0; i < cones.rows(); ++i) {
            const double wij = weights.entries(i, j);
            if (wij > 0.0)
                total += wij * std::max(wkde_log_pdf(kde, cones.flc(i, 0)), kLogDensityFloor);
        }
    }
    return total;
}

/// Out-of-sample mean squared error of point forecasts over a cone set,
/// conditioning on past cones only (the deployment setting).
inline double predict_mse(const LightConeSet& test_cones, const StateEnsemble& ensemble,
                          ForecastRule rule = ForecastRule::weighted_mixture) {
    detail::require_scalar_flc(test_cones);
    const Eigen::VectorXd forecasts = point_forecast_rows(ensemble, test_cones.plc, rule);
    return (test_cones.flc.col(0) - forecasts).squaredNorm() /
           static_cast<double>(test_cones.rows());
}

/// Alternative selection metric: condition the mixture weights on the
/// observed future value as well (the in-training weight update) before
/// forecasting. Kept behind a flag; not the deployment setting.
inline double predict_mse_flc_conditioned(const LightConeSet& test_cones,
                                          const StateEnsemble& ensemble,
                                          ForecastRule rule = ForecastRule::weighted_mixture,
                                          long exact_row_limit = 512) {
    detail::require_scalar_flc(test_cones);
    Eigen::MatrixXd logw = batched_plc_log_weights(ensemble, test_cones.plc);
    logw += detail::flc_log_density_matrix(test_cones.flc.col(0), ensemble, exact_row_limit);
    normalize_log_rows(logw);
    const Eigen::VectorXd means = state_means(ensemble);
    Eigen::VectorXd forecasts(logw.rows());
    if (rule == ForecastRule::weighted_mixture) {
        forecasts = logw * means;
    } else {
        for (Eigen::Index i = 0; i < logw.rows(); ++i)
            forecasts(i) = means(detail::argmax_row(logw, i));
    }
    return (test_cones.flc.col(0) - forecasts).squaredNorm() /
           static_cast<double>(test_cones.rows());
}

/// True when the Frobenius norm of the weight-matrix change is below delta.
inline bool check_converged(const WeightMatrix& current, const WeightMatrix& previous,
                            double delta) {
    detail::require(current.entries.rows() == previous.entries.rows() &&
                        current.entries.cols() == previous.entries.cols(),
                    "check_converged: shape mismatch");
    return (current.entries - previous.entries).norm() < delta;
}

// ---------------------------------------------------------------------------
// Merging

namespace detail {

// Pairwise L1 distances between the future-cone densities of two states,
// evaluated on the shared padded grid. Exact sums at small scale; the grid
// evaluator otherwise (the trapezoid and grid spec stay identical).
inline double pair_l1_distance(const StateEnsemble& ensemble, int a, int b, long exact_limit,
                               const std::vector<WkdeGridEvaluator>* evaluators) {
    const KdeComponent& ka = ensemble.states[static_cast<std::size_t>(a)].flc_model;
    const KdeComponent& kb = ensemble.states[static_cast<std::size_t>(b)].flc_model;
    if (ka.sample.values.size() <= exact_limit || evaluators == nullptr)
        return l1_distance(ka, kb);
    const auto grid = l1_grid(ka, kb, L1GridSpec{});
    Eigen::VectorXd fa(grid.points), fb(grid.points);
    for (int g = 0; g < grid.points; ++g) {
        const double x = grid.at(g);
        fa(g) = (*evaluators)[static_cast<std::size_t>(a)].pdf(x);
        fb(g) = (*evaluators)[static_cast<std::size_t>(b)].pdf(x);
    }
    return trapezoid_abs_diff(fa, fb, grid.step());
}

inline std::vector<WkdeGridEvaluator> make_flc_evaluators(const StateEnsemble& ensemble) {
    std::vector<WkdeGridEvaluator> evals;
    evals.reserve(ensemble.states.size());
    for (const auto& s : ensemble.states)
        evals.emplace_back(s.flc_model.sample.values, s.flc_model.sample.weights,
                           s.flc_model.bandwidth);
    return evals;
}

// Closest pair by L1 distance between future-cone densities; ties break
// toward the lexicographically smallest (j, k).
inline MergeRecord closest_pair(const StateEnsemble& ensemble, long exact_limit) {
    const int k = ensemble.state_count();
    std::vector<WkdeGridEvaluator> evals;
    const bool use_grid =
        ensemble.states.front().flc_model.sample.values.size() > exact_limit;
    if (use_grid) evals = make_flc_evaluators(ensemble);
    MergeRecord best{0, 1, std::numeric_limits<double>::infinity(), false};
    for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) {
            const double d =
                pair_l1_distance(ensemble, a, b, exact_limit, use_grid ? &evals : nullptr);
            if (d < best.distance) best = {a, b, d, false};
        }
    }
    return best;
}

inline void apply_merge(WeightMatrix& weights, int into, int from) {
    weights.entries.col(into) += weights.entries.col(from);
    const Eigen::Index k = weights.entries.cols();
    Eigen::MatrixXd reduced(weights.entries.rows(), k - 1);
    Eigen::Index out = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
        if (j == from) continue;
        reduced.col(out++) = weights.entries.col(j);
    }
    weights.entries = std::move(reduced);
}

}  // namespace detail

/// Merges the two states whose future-cone densities are closest in L1:
/// column j gains column k's mass, k is removed, and the state count drops by
/// one. Rows stay stochastic. The caller owns the K = 1 terminal branch.
inline std::pair<WeightMatrix, MergeRecord> merge_closest(const WeightMatrix& weights,
                                                          const StateEnsemble& ensemble) {
    detail::require(weights.state_count() >= 2, "merge_closest: needs at least two states");
    detail::require(weights.state_count() == ensemble.state_count(),
                    "merge_closest: weight/ensemble state count mismatch");
    MergeRecord record =
        detail::closest_pair(ensemble, std::numeric_limits<long>::max());
    WeightMatrix merged = weights;
    detail::apply_merge(merged, record.into, record.from);
    return {std::move(merged), record};
}

// ---------------------------------------------------------------------------
// The fit loop

namespace detail {

// Absorbs states whose effective mass fell below the floor into their
// L1-nearest neighbor. A state with essentially no mass at all carries no
// usable density; it folds into the lowest-index survivor.
inline std::vector<MergeRecord> force_merge_dead(const LightConeSet& cones, WeightMatrix& weights,
                                                 StateEnsemble& ensemble, const EmConfig& config) {
    std::vector<MergeRecord> records;
    while (ensemble.state_count() > 1) {
        int dead = -1;
        for (int j = 0; j < ensemble.state_count(); ++j) {
            if (ensemble.states[static_cast<std::size_t>(j)].dead) {
                dead = j;
                break;
            }
        }
        if (dead < 0) break;
        MergeRecord record;
        record.forced = true;
        record.from = dead;
        if (weights.entries.col(dead).sum() <= kTinyEffectiveMass) {
            record.into = dead == 0 ? 1 : 0;
            record.distance = 0.0;
        } else {
            std::vector<WkdeGridEvaluator> evals;
            const bool use_grid = cones.rows() > config.exact_kde_row_limit;
            if (use_grid) evals = make_flc_evaluators(ensemble);
            double best_d = std::numeric_limits<double>::infinity();
            int best_m = dead == 0 ? 1 : 0;
            for (int m = 0; m < ensemble.state_count(); ++m) {
                if (m == dead) continue;
                const double d = pair_l1_distance(ensemble, std::min(m, dead),
                                                  std::max(m, dead), config.exact_kde_row_limit,
                                                  use_grid ? &evals : nullptr);
                if (d < best_d) {
                    best_d = d;
                    best_m = m;
                }
            }
            record.into = best_m;
            record.distance = best_d;
        }
        apply_merge(weights, record.into, record.from);
        ensemble = build_ensemble(cones, weights, config.mass_floor);
        records.push_back(record);
    }
    return records;
}

struct RunOutcome {
    std::vector<IterationRecord> records;
    WeightMatrix best_weights;
    double best_mse = std::numeric_limits<double>::infinity();
    int best_iteration = -1;
    bool truncated = false;
};

inline double evaluate_selection_mse(const LightConeSet& test, const StateEnsemble& ensemble,
                                     const EmConfig& config) {
    if (config.selection_conditions_on_flc)
        return predict_mse_flc_conditioned(test, ensemble, ForecastRule::weighted_mixture,
                                           config.exact_kde_row_limit);
    return predict_mse(test, ensemble);
}

inline RunOutcome run_chain(const LightConeSet& train, const LightConeSet& test,
                            const EmConfig& config, int run_index) {
    RunOutcome out;
    const std::uint64_t seed =
        derive_seed(config.seed, {stream::kInit, static_cast<std::uint64_t>(run_index)});
    const InitMode mode = run_index == 0 ? InitMode::kmeanspp : InitMode::random;
    WeightMatrix weights = init_weights(train, config.k_max, mode, seed);
    StateEnsemble ensemble = build_ensemble(train, weights, config.mass_floor);
    const double sqrt_n = std::sqrt(static_cast<double>(train.rows()));

    int iteration = 0;
    while (true) {
        if (iteration >= config.max_iterations) {
            out.truncated = true;
            break;
        }
        ++iteration;

        EStepResult estep =
            e_step_impl(train, ensemble, {config.exact_kde_row_limit, config.hard_assignment});
        const double weight_delta =
            (estep.weights.entries - weights.entries).norm() / sqrt_n;
        weights = std::move(estep.weights);
        if (config.validate_invariants) weights.validate();
        const int k_at_estep = weights.state_count();

        ensemble = build_ensemble(train, weights, config.mass_floor);
        IterationRecord record;
        record.merges = force_merge_dead(train, weights, ensemble, config);

        record.run = run_index;
        record.iteration = iteration;
        record.state_count = k_at_estep;
        record.log_likelihood = estep.flc_log_likelihood;
        record.weight_delta = weight_delta;
        record.underflow_rows = estep.underflow_rows;
        for (const auto& s : ensemble.states)
            if (s.bandwidth_fallback) ++record.bandwidth_fallbacks;
        record.test_mse = evaluate_selection_mse(test, ensemble, config);
        record.train_mse = predict_mse(train, ensemble);
        out.records.push_back(record);

        if (record.test_mse < out.best_mse) {
            out.best_mse = record.test_mse;
            out.best_weights = weights;
            out.best_iteration = iteration;
        }

        if (weight_delta < config.delta) {
            if (weights.state_count() == 1) break;  // terminal: converged at a single state
            MergeRecord merge = closest_pair(ensemble, config.exact_kde_row_limit);
            apply_merge(weights, merge.into, merge.from);
            ensemble = build_ensemble(train, weights, config.mass_floor);
            out.records.back().merges.push_back(merge);
            auto forced = force_merge_dead(train, weights, ensemble, config);
            out.records.back().merges.insert(out.records.back().merges.end(), forced.begin(),
                                             forced.end());
        }
    }
    return out;
}

}  // namespace detail

/// Fits the model: `n_runs` independent EM chains (the first k-means++
/// initialized, the rest random), each iterating E-step and approximate
/// M-step, merging the closest pair of states at every temporary convergence
/// until one state remains. Returns the weight matrix with the lowest
/// out-of-sample MSE seen at any recorded iteration of any run.
inline ModelArtifact fit(const LightConeSet& train_cones, const LightConeSet& test_cones,
                         const EmConfig& config) {
    config.validate();
    detail::require_scalar_flc(train_cones);
    detail::require_scalar_flc(test_cones);
    detail::require(train_cones.plc.cols() == test_cones.plc.cols(),
                    "fit: train/test cone dimensions differ");
    detail::require(config.k_max <= train_cones.rows(),
                    "fit: k_max exceeds the number of training cones");

    int jobs = config.jobs;
    if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
    if (jobs < 1) jobs = 1;

    std::vector<detail::RunOutcome> outcomes(static_cast<std::size_t>(config.n_runs));
    if (jobs == 1 || config.n_runs == 1) {
        for (int r = 0; r < config.n_runs; ++r)
            outcomes[static_cast<std::size_t>(r)] =
                detail::run_chain(train_cones, test_cones, config, r);
    } else {
        std::counting_semaphore<256> slots(std::min(jobs, 256));
        std::vector<std::future<void>> futures;
        futures.reserve(static_cast<std::size_t>(config.n_runs));
        for (int r = 0; r < config.n_runs; ++r) {
            futures.push_back(std::async(std::launch::async, [&, r] {
                slots.acquire();
                outcomes[static_cast<std::size_t>(r)] =
                    detail::run_chain(train_cones, test_cones, config, r);
                slots.release();
            }));
        }
        for (auto& f : futures) f.get();
    }

    int best_run = 0;
    for (int r = 1; r < config.n_runs; ++r) {
        if (outcomes[static_cast<std::size_t>(r)].best_mse <
            outcomes[static_cast<std::size_t>(best_run)].best_mse)
            best_run = r;
    }
    const detail::RunOutcome& best = outcomes[static_cast<std::size_t>(best_run)];
    detail::ensure(best.best_iteration >= 0, "fit: no iteration was evaluated");

    ModelArtifact artifact;
    artifact.geometry = train_cones.geometry;
    artifact.config = config;
    artifact.weights = best.best_weights;
    artifact.ensemble = build_ensemble(train_cones, artifact.weights, config.mass_floor);
    artifact.train_flc = train_cones.flc.col(0);
    artifact.seed = config.seed;
    artifact.best_test_mse = best.best_mse;
    artifact.best_run = best_run;
    artifact.best_iteration = best.best_iteration;
    for (const auto& outcome : outcomes) {
        artifact.truncated = artifact.truncated || outcome.truncated;
        artifact.trace.iterations.insert(artifact.trace.iterations.end(), outcome.records.begin(),
                                         outcome.records.end());
    }
    if (config.validate_invariants) {
        artifact.weights.validate();
        artifact.ensemble.validate();
        const double recomputed = detail::evaluate_selection_mse(test_cones, artifact.ensemble, config);
        detail::ensure(recomputed == artifact.best_test_mse,
                       "fit: selected model does not reproduce its recorded MSE");
    }
    return artifact;
}

/// Hard-threshold baseline: the identical loop except that every E-step row
/// is collapsed to a one-hot argmax assignment before the M-step. A stand-in
/// for hard clustering, not a reimplementation of any particular predecessor.
inline ModelArtifact fit_hard_baseline(const LightConeSet& train_cones,
                                       const LightConeSet& test_cones, const EmConfig& config) {
    EmConfig hard = config;
    hard.hard_assignment = true;
    return fit(train_cones, test_cones, hard);
}

}  // namespace statecast
