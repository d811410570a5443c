// statecast: reconstruct predictive states of a spatio-temporal field from a
// single realization, forecast with the fitted model, and simulate new
// realizations. Subcommands: simulate, fit, predict, generate, bench.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <semaphore>
#include <string>
#include <vector>

#include "statecast/statecast.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Exit codes: 0 success, 2 usage or configuration error, 3 data error,
// 4 internal invariant violation.
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

struct RunConfig {
    // Field / simulator parameters.
    int size = 100;
    int steps = 200;
    int burnin = 100;
    std::string initial = "zeros";
    std::string patch_sign = "pos";
    // Cone geometry (override the field metadata at fit time).
    int hp = 2;
    int hf = 0;
    int speed = 1;
    // Fit parameters.
    int kmax = 15;
    int max_iter = 1000;
    int runs = 10;
    double delta = 1e-3;
    double split = 0.5;
    bool hard = false;
    bool select_flc_weights = false;
    // Prediction / generation.
    int tmax = 200;
    double eval_split = -1.0;  // < 0: score every fully observed cell
    std::vector<std::string> density_at;
    std::string init_field;
    // Benchmark.
    int replicates = 20;
    // Shared.
    std::uint64_t seed = 0;
    std::string out = ".";
    std::string config_file;
    int jobs = 1;
};

ordered_json config_to_json(const std::string& command, const RunConfig& c) {
    ordered_json j{{"command", command}, {"seed", c.seed}, {"out", c.out}, {"jobs", c.jobs}};
    if (command == "simulate" || command == "bench") {
        j["size"] = c.size;
        j["steps"] = c.steps;
        j["burnin"] = c.burnin;
        j["initial"] = c.initial;
        j["patch_sign"] = c.patch_sign;
    }
    if (command != "generate") {
        j["hp"] = c.hp;
        j["hf"] = c.hf;
        j["speed"] = c.speed;
    }
    if (command == "fit" || command == "bench") {
        j["kmax"] = c.kmax;
        j["max_iter"] = c.max_iter;
        j["runs"] = c.runs;
        j["delta"] = c.delta;
        j["split"] = c.split;
        j["hard"] = c.hard;
        j["select_flc_weights"] = c.select_flc_weights;
    }
    if (command == "predict") {
        j["eval_split"] = c.eval_split;
        j["density_at"] = c.density_at;
    }
    if (command == "generate") {
        j["tmax"] = c.tmax;
        j["initial"] = c.initial;
        j["patch_sign"] = c.patch_sign;
        j["size"] = c.size;
        j["init_field"] = c.init_field;
    }
    if (command == "bench") j["replicates"] = c.replicates;
    return j;
}

// Config precedence: explicit CLI flags > config file > defaults. The
// emitted config.json feeds straight back through --config to replay a run.
void apply_config_file(const CLI::App& app, RunConfig& c) {
    if (c.config_file.empty()) return;
    std::ifstream in(c.config_file);
    if (!in) throw statecast::ConfigError("cannot open config file: " + c.config_file);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw statecast::ConfigError("config file " + c.config_file + ": " + e.what());
    }
    auto flag_given = [&app](const std::string& name) {
        const CLI::Option* opt = app.get_option_no_throw(name);
        return opt != nullptr && opt->count() > 0;
    };
    auto load = [&](const char* key, const std::string& flag, auto& target) {
        if (j.contains(key) && !flag_given(flag)) {
            try {
                target = j.at(key).get<std::decay_t<decltype(target)>>();
            } catch (const nlohmann::json::exception& e) {
                throw statecast::ConfigError(std::string("config file key '") + key + "': " +
                                             e.what());
            }
        }
    };
    load("size", "--size", c.size);
    load("steps", "--steps", c.steps);
    load("burnin", "--burnin", c.burnin);
    load("initial", "--initial", c.initial);
    load("patch_sign", "--patch-sign", c.patch_sign);
    load("hp", "--hp", c.hp);
    load("hf", "--hf", c.hf);
    load("speed", "--speed", c.speed);
    load("kmax", "--kmax", c.kmax);
    load("max_iter", "--max-iter", c.max_iter);
    load("runs", "--runs", c.runs);
    load("delta", "--delta", c.delta);
    load("split", "--split", c.split);
    load("hard", "--hard", c.hard);
    load("select_flc_weights", "--select-flc-weights", c.select_flc_weights);
    load("tmax", "--tmax", c.tmax);
    load("eval_split", "--eval-split", c.eval_split);
    load("init_field", "--init-field", c.init_field);
    load("replicates", "--replicates", c.replicates);
    load("seed", "--seed", c.seed);
    load("jobs", "--jobs", c.jobs);
}

fs::path require_out_dir(const RunConfig& c) {
    fs::path dir(c.out);
    if (!fs::exists(dir) || !fs::is_directory(dir))
        throw statecast::DataError("output directory does not exist: " + c.out);
    return dir;
}

void write_json_file(const ordered_json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw statecast::DataError("cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw statecast::DataError("write failed: " + path.string());
}

void write_resolved_config(const std::string& command, const RunConfig& c, const fs::path& dir) {
    write_json_file(config_to_json(command, c), dir / "config.json");
}

statecast::CaConfig ca_config_from(const RunConfig& c, std::uint64_t seed) {
    statecast::CaConfig ca;
    ca.spatial_size = c.size;
    ca.time_steps = c.steps;
    ca.burn_in = c.burnin;
    ca.initial = statecast::initial_condition_from_string(c.initial);
    if (c.patch_sign != "pos" && c.patch_sign != "neg")
        throw statecast::ConfigError("--patch-sign must be pos or neg");
    ca.first_patch_positive = c.patch_sign == "pos";
    ca.seed = seed;
    return ca;
}

statecast::EmConfig em_config_from(const RunConfig& c, std::uint64_t seed, int jobs) {
    statecast::EmConfig em;
    em.k_max = c.kmax;
    em.delta = c.delta;
    em.max_iterations = c.max_iter;
    em.n_runs = c.runs;
    em.seed = seed;
    em.hard_assignment = c.hard;
    em.selection_conditions_on_flc = c.select_flc_weights;
    em.jobs = jobs;
    em.validate();
    return em;
}

statecast::FieldGeometry cone_geometry_from(const RunConfig& c, const statecast::Field& field) {
    statecast::FieldGeometry g = field.geometry;
    g.past_horizon = c.hp;
    g.future_horizon = c.hf;
    g.speed = c.speed;
    g.validate();
    return g;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& c) {
    const fs::path dir = require_out_dir(c);
    statecast::CaRealization real = statecast::simulate_true(ca_config_from(c, c.seed));
    real.observed.geometry.past_horizon = c.hp;
    real.observed.geometry.future_horizon = c.hf;
    real.observed.geometry.speed = c.speed;
    real.observed.validate();
    statecast::write_field(real.observed, (dir / "observed.csv").string());
    statecast::write_matrix_csv(real.latent, (dir / "latent.csv").string());
    write_resolved_config("simulate", c, dir);
    std::printf("simulated %dx%d field (burn-in %d) -> %s\n", c.size, c.steps, c.burnin,
                (dir / "observed.csv").c_str());
    return 0;
}

void write_trace_csv(const statecast::FitTrace& trace, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw statecast::DataError("cannot open for writing: " + path.string());
    out << "run,iteration,state_count,log_likelihood,train_mse,test_mse,weight_delta,"
           "merge_count,merge_detail,bandwidth_fallbacks,underflow_rows\n";
    for (const auto& r : trace.iterations) {
        std::string detail;
        for (const auto& m : r.merges) {
            if (!detail.empty()) detail += ';';
            detail += std::to_string(m.into) + ":" + std::to_string(m.from) + ":" +
                      statecast::detail::format_double(m.distance) + ":" +
                      (m.forced ? "forced" : "closest");
        }
        out << r.run << ',' << r.iteration << ',' << r.state_count << ','
            << statecast::detail::format_double(r.log_likelihood) << ','
            << statecast::detail::format_double(r.train_mse) << ','
            << statecast::detail::format_double(r.test_mse) << ','
            << statecast::detail::format_double(r.weight_delta) << ',' << r.merges.size() << ','
            << detail << ',' << r.bandwidth_fallbacks << ',' << r.underflow_rows << '\n';
    }
    if (!out) throw statecast::DataError("write failed: " + path.string());
}

void write_state_field_csv(const statecast::ModelArtifact& model,
                           const statecast::LightConeSet& train, const fs::path& path) {
    Eigen::MatrixXi states = Eigen::MatrixXi::Constant(train.geometry.spatial_size,
                                                       train.geometry.time_steps, -1);
    for (Eigen::Index i = 0; i < train.rows(); ++i) {
        const auto [r, t] = train.index_map[static_cast<std::size_t>(i)];
        Eigen::Index best = 0;
        model.weights.entries.row(i).maxCoeff(&best);
        states(r - 1, t - 1) = static_cast<int>(best);
    }
    statecast::write_matrix_csv(states, path.string());
}

void write_state_densities_csv(const statecast::ModelArtifact& model, const fs::path& path) {
    double h_max = 0.0;
    for (const auto& s : model.ensemble.states) h_max = std::max(h_max, s.flc_model.bandwidth);
    const double lo = model.train_flc.minCoeff() - 3.0 * h_max;
    const double hi = model.train_flc.maxCoeff() + 3.0 * h_max;
    const int points = 512;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw statecast::DataError("cannot open for writing: " + path.string());
    out << "state,x,density\n";
    for (int j = 0; j < model.state_count(); ++j) {
        const auto& kde = model.ensemble.states[static_cast<std::size_t>(j)].flc_model;
        for (int g = 0; g < points; ++g) {
            const double x = lo + (hi - lo) * g / (points - 1);
            out << j << ',' << statecast::detail::format_double(x) << ','
                << statecast::detail::format_double(statecast::wkde_pdf(kde, x)) << '\n';
        }
    }
    if (!out) throw statecast::DataError("write failed: " + path.string());
}

int cmd_fit(const RunConfig& c, const std::string& field_path) {
    const fs::path dir = require_out_dir(c);
    statecast::Field field = statecast::read_field(field_path);
    field.geometry = cone_geometry_from(c, field);
    const statecast::LightConeSet cones = statecast::extract_light_cones(field);
    auto [train, test] = statecast::split_train_test(cones, c.split);

    const statecast::EmConfig em = em_config_from(c, c.seed, c.jobs);
    const statecast::ModelArtifact model = c.hard
                                               ? statecast::fit_hard_baseline(train, test, em)
                                               : statecast::fit(train, test, em);

    statecast::save_model(model, (dir / "model.json").string());
    write_trace_csv(model.trace, dir / "trace.csv");
    write_state_field_csv(model, train, dir / "states.csv");
    write_state_densities_csv(model, dir / "densities.csv");
    write_resolved_config("fit", c, dir);
    std::printf("fit: states=%d best_test_mse=%.6f (run %d, iteration %d)%s -> %s\n",
                model.state_count(), model.best_test_mse, model.best_run, model.best_iteration,
                model.truncated ? " [truncated]" : "", (dir / "model.json").c_str());
    return 0;
}

int cmd_predict(const RunConfig& c, const std::string& model_path,
                const std::string& field_path) {
    const fs::path dir = require_out_dir(c);
    const statecast::ModelArtifact model = statecast::load_model(model_path);
    statecast::Field field = statecast::read_field(field_path);

    const statecast::OneStepForecast result = statecast::one_step_forecast(model, field);
    double mse = result.mse;
    long cells = result.cells;
    if (c.eval_split > 0.0) {
        const statecast::LightConeSet cones = statecast::extract_light_cones(field);
        auto [train, test] = statecast::split_train_test(cones, c.eval_split);
        mse = model.config.selection_conditions_on_flc
                  ? statecast::predict_mse_flc_conditioned(test, model.ensemble,
                                                           statecast::ForecastRule::weighted_mixture,
                                                           model.config.exact_kde_row_limit)
                  : statecast::predict_mse(test, model.ensemble);
        cells = test.rows();
    }

    statecast::write_field(result.forecast, (dir / "forecast.csv").string());
    statecast::write_field(result.residual, (dir / "residuals.csv").string());
    write_json_file(ordered_json{{"mse", mse},
                                 {"cells", cells},
                                 {"eval_split", c.eval_split},
                                 {"model", model_path},
                                 {"field", field_path}},
                    dir / "summary.json");

    if (!c.density_at.empty()) {
        const statecast::LightConeSet cones = statecast::extract_light_cones(field);
        std::ofstream out(dir / "predictive_densities.csv", std::ios::binary);
        out << "site,time,x,density\n";
        for (const std::string& spec : c.density_at) {
            int r = 0, t = 0;
            if (std::sscanf(spec.c_str(), "%d,%d", &r, &t) != 2)
                throw statecast::ConfigError("--density-at expects 'site,time', got '" + spec +
                                             "'");
            Eigen::Index row = -1;
            for (Eigen::Index i = 0; i < cones.rows(); ++i) {
                if (cones.index_map[static_cast<std::size_t>(i)] == std::make_pair(r, t)) {
                    row = i;
                    break;
                }
            }
            if (row < 0)
                throw statecast::DataError("--density-at: no fully observed cone at (" +
                                           std::to_string(r) + "," + std::to_string(t) + ")");
            double h_max = 0.0;
            for (const auto& s : model.ensemble.states)
                h_max = std::max(h_max, s.flc_model.bandwidth);
            const double lo = model.train_flc.minCoeff() - 3.0 * h_max;
            const double hi = model.train_flc.maxCoeff() + 3.0 * h_max;
            const statecast::PredictiveMixture mix =
                statecast::predictive_mixture(model.ensemble, cones.plc.row(row).transpose());
            for (int g = 0; g < 512; ++g) {
                const double x = lo + (hi - lo) * g / 511;
                out << r << ',' << t << ',' << statecast::detail::format_double(x) << ','
                    << statecast::detail::format_double(mix.pdf(x)) << '\n';
            }
        }
        if (!out) throw statecast::DataError("write failed: predictive_densities.csv");
    }

    write_resolved_config("predict", c, dir);
    std::printf("predict: mse=%.6f over %ld cells -> %s\n", mse, cells,
                (dir / "summary.json").c_str());
    return 0;
}

Eigen::MatrixXd initial_slices_from(const RunConfig& c, const statecast::ModelArtifact& model) {
    const int hp = model.geometry.past_horizon;
    if (!c.init_field.empty()) {
        const statecast::Field f = statecast::read_field(c.init_field);
        if (f.geometry.time_steps < hp)
            throw statecast::DataError("--init-field: field has fewer than past_horizon slices");
        return f.values.rightCols(hp);
    }
    const int s_count = c.size;
    Eigen::MatrixXd init(s_count, hp);
    if (c.initial == "zeros") {
        init.setZero();
        return init;
    }
    if (c.initial != "patches") throw statecast::ConfigError("--initial must be zeros or patches");
    // Patch start: every slice -1 except the latest, which carries the
    // alternating +/-3 blocks.
    init.setConstant(-1.0);
    const bool first_positive = c.patch_sign == "pos";
    for (int r = 1; r <= s_count; ++r) {
        const int block = (r - 1) / 10;
        const bool positive = (block % 2 == 0) == first_positive;
        init(r - 1, hp - 1) = positive ? 3.0 : -3.0;
    }
    return init;
}

int cmd_generate(const RunConfig& c, const std::string& model_path) {
    const fs::path dir = require_out_dir(c);
    const statecast::ModelArtifact model = statecast::load_model(model_path);
    const Eigen::MatrixXd init = initial_slices_from(c, model);
    const statecast::Field sim = statecast::simulate_from_model(model, init, c.tmax, c.seed);
    statecast::write_field(sim, (dir / "simulated.csv").string());
    write_resolved_config("generate", c, dir);
    std::printf("generated %dx%d field from model -> %s\n",
                static_cast<int>(sim.values.rows()), static_cast<int>(sim.values.cols()),
                (dir / "simulated.csv").c_str());
    return 0;
}

struct BenchRow {
    int replicate;
    std::uint64_t seed;
    std::string algorithm;
    std::string eval_set;
    std::string forecast;
    double mse;
    int k_star;
    int best_iteration;
    bool truncated;
};

int cmd_bench(const RunConfig& c) {
    const fs::path dir = require_out_dir(c);
    if (c.replicates < 1) throw statecast::ConfigError("--replicates must be at least 1");

    std::vector<std::vector<BenchRow>> rows(static_cast<std::size_t>(c.replicates));
    auto run_replicate = [&](int i) {
        const std::uint64_t rep_seed =
            statecast::derive_seed(c.seed, {statecast::stream::kReplicate,
                                            static_cast<std::uint64_t>(i)});
        statecast::CaConfig ca = ca_config_from(c, statecast::derive_seed(rep_seed, {statecast::stream::kField, 0}));
        statecast::CaRealization train_real = statecast::simulate_true(ca);
        ca.seed = statecast::derive_seed(rep_seed, {statecast::stream::kField, 1});
        statecast::CaRealization indep_real = statecast::simulate_true(ca);

        auto stamp = [&](statecast::Field& f) {
            f.geometry.past_horizon = c.hp;
            f.geometry.future_horizon = c.hf;
            f.geometry.speed = c.speed;
            f.geometry.validate();
        };
        stamp(train_real.observed);
        stamp(indep_real.observed);

        const statecast::LightConeSet cones = statecast::extract_light_cones(train_real.observed);
        auto [train, test] = statecast::split_train_test(cones, c.split);
        const statecast::LightConeSet indep = statecast::extract_light_cones(indep_real.observed);

        const statecast::EmConfig em = em_config_from(c, rep_seed, 1);
        const statecast::ModelArtifact mixed = statecast::fit(train, test, em);
        const statecast::ModelArtifact hard = statecast::fit_hard_baseline(train, test, em);

        ordered_json rep_summary = ordered_json::object();
        auto eval = [&](const statecast::ModelArtifact& model, const std::string& name) {
            using statecast::ForecastRule;
            const auto& ens = model.ensemble;
            const double fut_w = model.best_test_mse;
            const double fut_m = statecast::predict_mse(test, ens, ForecastRule::max_weight);
            const double ind_w = statecast::predict_mse(indep, ens);
            const double ind_m = statecast::predict_mse(indep, ens, ForecastRule::max_weight);
            const int k = model.state_count();
            auto& out = rows[static_cast<std::size_t>(i)];
            out.push_back({i, rep_seed, name, "future", "weighted", fut_w, k,
                           model.best_iteration, model.truncated});
            out.push_back({i, rep_seed, name, "future", "max_weight", fut_m, k,
                           model.best_iteration, model.truncated});
            out.push_back({i, rep_seed, name, "independent", "weighted", ind_w, k,
                           model.best_iteration, model.truncated});
            out.push_back({i, rep_seed, name, "independent", "max_weight", ind_m, k,
                           model.best_iteration, model.truncated});
            rep_summary[name] = ordered_json{{"k_star", k},
                                             {"future_weighted", fut_w},
                                             {"future_max_weight", fut_m},
                                             {"independent_weighted", ind_w},
                                             {"independent_max_weight", ind_m},
                                             {"truncated", model.truncated}};
        };
        eval(mixed, "mixed");
        eval(hard, "hard");

        char name[32];
        std::snprintf(name, sizeof(name), "rep_%03d", i);
        const fs::path rep_dir = dir / name;
        fs::create_directory(rep_dir);
        rep_summary["seed"] = rep_seed;
        write_json_file(rep_summary, rep_dir / "summary.json");
    };

    int jobs = c.jobs;
    if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
    if (jobs < 1) jobs = 1;
    if (jobs == 1) {
        for (int i = 0; i < c.replicates; ++i) run_replicate(i);
    } else {
        std::counting_semaphore<256> slots(std::min(jobs, 256));
        std::vector<std::future<void>> futures;
        for (int i = 0; i < c.replicates; ++i) {
            futures.push_back(std::async(std::launch::async, [&, i] {
                slots.acquire();
                run_replicate(i);
                slots.release();
            }));
        }
        for (auto& f : futures) f.get();
    }

    std::ofstream out(dir / "results.csv", std::ios::binary);
    if (!out) throw statecast::DataError("cannot open for writing: results.csv");
    out << "replicate,seed,algorithm,eval_set,forecast,mse,k_star,best_iteration,truncated\n";
    for (const auto& rep : rows) {
        for (const auto& r : rep) {
            out << r.replicate << ',' << r.seed << ',' << r.algorithm << ',' << r.eval_set << ','
                << r.forecast << ',' << statecast::detail::format_double(r.mse) << ',' << r.k_star
                << ',' << r.best_iteration << ',' << (r.truncated ? 1 : 0) << '\n';
        }
    }
    if (!out) throw statecast::DataError("write failed: results.csv");
    write_resolved_config("bench", c, dir);
    std::printf("bench: %d replicates -> %s\n", c.replicates, (dir / "results.csv").c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"predictive-state reconstruction and forecasting for spatio-temporal fields"};
    app.require_subcommand(1);
    RunConfig cfg;
    std::string field_path, model_path;

    auto add_common = [&cfg](CLI::App* cmd) {
        cmd->add_option("--seed", cfg.seed, "master RNG seed");
        cmd->add_option("--out", cfg.out, "output directory (must exist)");
        cmd->add_option("--config", cfg.config_file, "JSON config file (flags take precedence)");
        cmd->add_option("--jobs", cfg.jobs, "max parallel workers (0 = hardware)");
    };
    auto add_cone_flags = [&cfg](CLI::App* cmd) {
        cmd->add_option("--hp", cfg.hp, "past-cone horizon");
        cmd->add_option("--hf", cfg.hf, "future-cone horizon");
        cmd->add_option("--speed", cfg.speed, "propagation speed (sites per step)");
    };

    CLI::App* simulate = app.add_subcommand("simulate", "simulate the test system");
    add_common(simulate);
    add_cone_flags(simulate);
    simulate->add_option("--size", cfg.size, "number of lattice sites");
    simulate->add_option("--steps", cfg.steps, "time steps kept after burn-in");
    simulate->add_option("--burnin", cfg.burnin, "discarded leading time steps");
    simulate->add_option("--initial", cfg.initial, "initial condition: zeros|patches");
    simulate->add_option("--patch-sign", cfg.patch_sign, "sign of the first patch block: pos|neg");

    CLI::App* fit = app.add_subcommand("fit", "fit a predictive-state model to a field");
    add_common(fit);
    add_cone_flags(fit);
    fit->add_option("field", field_path, "field CSV (with .meta.json sidecar)")->required();
    fit->add_option("--kmax", cfg.kmax, "initial number of states");
    fit->add_option("--delta", cfg.delta, "convergence threshold on the weight change");
    fit->add_option("--max-iter", cfg.max_iter, "iteration budget per run");
    fit->add_option("--runs", cfg.runs, "independent EM runs");
    fit->add_option("--split", cfg.split, "training fraction of the time axis");
    fit->add_flag("--hard", cfg.hard, "hard-assignment baseline");
    fit->add_flag("--select-flc-weights", cfg.select_flc_weights,
                  "condition selection MSE weights on the observed value");

    CLI::App* predict = app.add_subcommand("predict", "one-step forecasts over a field");
    add_common(predict);
    predict->add_option("model", model_path, "model JSON")->required();
    predict->add_option("field", field_path, "field CSV")->required();
    predict->add_option("--eval-split", cfg.eval_split,
                        "score only cells after this training fraction");
    predict->add_option("--density-at", cfg.density_at,
                        "emit the predictive density at 'site,time' (repeatable)");

    CLI::App* generate = app.add_subcommand("generate", "simulate a new realization from a model");
    add_common(generate);
    generate->add_option("model", model_path, "model JSON")->required();
    generate->add_option("--tmax", cfg.tmax, "generated time steps after the initial slices");
    generate->add_option("--size", cfg.size, "lattice sites of the new realization");
    generate->add_option("--initial", cfg.initial, "initial condition: zeros|patches");
    generate->add_option("--patch-sign", cfg.patch_sign, "sign of the first patch block: pos|neg");
    generate->add_option("--init-field", cfg.init_field, "field CSV providing the initial slices");

    CLI::App* bench = app.add_subcommand("bench", "replicated mixed-vs-hard benchmark");
    add_common(bench);
    add_cone_flags(bench);
    bench->add_option("--replicates", cfg.replicates, "number of replicates");
    bench->add_option("--size", cfg.size, "number of lattice sites");
    bench->add_option("--steps", cfg.steps, "time steps kept after burn-in");
    bench->add_option("--burnin", cfg.burnin, "discarded leading time steps");
    bench->add_option("--initial", cfg.initial, "initial condition: zeros|patches");
    bench->add_option("--patch-sign", cfg.patch_sign, "sign of the first patch block: pos|neg");
    bench->add_option("--kmax", cfg.kmax, "initial number of states");
    bench->add_option("--delta", cfg.delta, "convergence threshold on the weight change");
    bench->add_option("--max-iter", cfg.max_iter, "iteration budget per run");
    bench->add_option("--runs", cfg.runs, "independent EM runs per fit");
    bench->add_option("--split", cfg.split, "training fraction of the time axis");
    bench->add_flag("--select-flc-weights", cfg.select_flc_weights,
                    "condition selection MSE weights on the observed value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : kExitUsage;
    }

    try {
        CLI::App* active = app.get_subcommands().front();
        apply_config_file(*active, cfg);
        if (active == simulate) return cmd_simulate(cfg);
        if (active == fit) return cmd_fit(cfg, field_path);
        if (active == predict) return cmd_predict(cfg, model_path, field_path);
        if (active == generate) return cmd_generate(cfg, model_path);
        if (active == bench) return cmd_bench(cfg);
        std::cerr << "unknown subcommand\n";
        return kExitUsage;
    } catch (const statecast::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const statecast::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const statecast::InternalError& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInternal;
    }
}
