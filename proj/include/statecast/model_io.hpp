#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "statecast/field_io.hpp"
#include "statecast/model.hpp"

namespace statecast {

// The model file is a single JSON document carrying full-precision decimal
// numbers (shortest round-trip form), so a save/load cycle reproduces every
// weight, mean, covariance, and bandwidth bit-exactly.

namespace detail {

using OrderedJson = nlohmann::ordered_json;

inline OrderedJson vector_to_json(const Eigen::VectorXd& v) {
    OrderedJson a = OrderedJson::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& a) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    Eigen::Index i = 0;
    for (const auto& x : a) v(i++) = x.get<double>();
    return v;
}

inline OrderedJson matrix_to_json(const Eigen::MatrixXd& m) {
    OrderedJson rows = OrderedJson::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        OrderedJson row = OrderedJson::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows) {
    if (rows.empty()) return {};
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.front().size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        require(static_cast<Eigen::Index>(row.size()) == m.cols(),
                "model file: ragged matrix rows");
        Eigen::Index c = 0;
        for (const auto& x : row) m(r, c++) = x.get<double>();
        ++r;
    }
    return m;
}

inline OrderedJson config_to_json(const EmConfig& c) {
    return OrderedJson{{"k_max", c.k_max},
                       {"delta", c.delta},
                       {"max_iterations", c.max_iterations},
                       {"n_runs", c.n_runs},
                       {"seed", c.seed},
                       {"hard_assignment", c.hard_assignment},
                       {"mass_floor", c.mass_floor},
                       {"exact_kde_row_limit", c.exact_kde_row_limit},
                       {"selection_conditions_on_flc", c.selection_conditions_on_flc}};
}

inline EmConfig config_from_json(const nlohmann::json& j) {
    EmConfig c;
    c.k_max = j.at("k_max").get<int>();
    c.delta = j.at("delta").get<double>();
    c.max_iterations = j.at("max_iterations").get<int>();
    c.n_runs = j.at("n_runs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.hard_assignment = j.at("hard_assignment").get<bool>();
    c.mass_floor = j.at("mass_floor").get<double>();
    c.exact_kde_row_limit = j.at("exact_kde_row_limit").get<long>();
    c.selection_conditions_on_flc = j.at("selection_conditions_on_flc").get<bool>();
    return c;
}

inline OrderedJson trace_to_json(const FitTrace& trace) {
    OrderedJson a = OrderedJson::array();
    for (const auto& rec : trace.iterations) {
        OrderedJson merges = OrderedJson::array();
        for (const auto& m : rec.merges) {
            merges.push_back(OrderedJson{{"into", m.into},
                                         {"from", m.from},
                                         {"distance", m.distance},
                                         {"forced", m.forced}});
        }
        a.push_back(OrderedJson{{"run", rec.run},
                                {"iteration", rec.iteration},
                                {"state_count", rec.state_count},
                                {"log_likelihood", rec.log_likelihood},
                                {"train_mse", rec.train_mse},
                                {"test_mse", rec.test_mse},
                                {"weight_delta", rec.weight_delta},
                                {"merges", std::move(merges)},
                                {"bandwidth_fallbacks", rec.bandwidth_fallbacks},
                                {"underflow_rows", rec.underflow_rows}});
    }
    return a;
}

inline FitTrace trace_from_json(const nlohmann::json& a) {
    FitTrace trace;
    trace.iterations.reserve(a.size());
    for (const auto& j : a) {
        IterationRecord rec;
        rec.run = j.at("run").get<int>();
        rec.iteration = j.at("iteration").get<int>();
        rec.state_count = j.at("state_count").get<int>();
        rec.log_likelihood = j.at("log_likelihood").get<double>();
        rec.train_mse = j.at("train_mse").get<double>();
        rec.test_mse = j.at("test_mse").get<double>();
        rec.weight_delta = j.at("weight_delta").get<double>();
        for (const auto& m : j.at("merges")) {
            rec.merges.push_back(MergeRecord{m.at("into").get<int>(), m.at("from").get<int>(),
                                             m.at("distance").get<double>(),
                                             m.at("forced").get<bool>()});
        }
        rec.bandwidth_fallbacks = j.at("bandwidth_fallbacks").get<int>();
        rec.underflow_rows = j.at("underflow_rows").get<int>();
        trace.iterations.push_back(std::move(rec));
    }
    return trace;
}

}  // namespace detail

inline nlohmann::ordered_json model_to_json(const ModelArtifact& model) {
    using detail::OrderedJson;
    OrderedJson states = OrderedJson::array();
    for (const auto& s : model.ensemble.states) {
        states.push_back(OrderedJson{{"prior", s.prior},
                                     {"effective_size", s.effective_size},
                                     {"bandwidth", s.flc_model.bandwidth},
                                     {"bandwidth_fallback", s.bandwidth_fallback},
                                     {"mean", detail::vector_to_json(s.plc_model.mean())},
                                     {"covariance", detail::matrix_to_json(s.plc_model.covariance())}});
    }
    return OrderedJson{{"format_version", model.format_version},
                       {"geometry", geometry_to_json(model.geometry)},
                       {"config", detail::config_to_json(model.config)},
                       {"seed", model.seed},
                       {"best_test_mse", model.best_test_mse},
                       {"best_run", model.best_run},
                       {"best_iteration", model.best_iteration},
                       {"truncated", model.truncated},
                       {"states", std::move(states)},
                       {"train_flc", detail::vector_to_json(model.train_flc)},
                       {"weights", detail::matrix_to_json(model.weights.entries)},
                       {"trace", detail::trace_to_json(model.trace)}};
}

inline ModelArtifact model_from_json(const nlohmann::json& j) {
    int version = 0;
    try {
        version = j.at("format_version").get<int>();
    } catch (const nlohmann::json::exception&) {
        throw DataError("model file: missing format_version");
    }
    if (version != kModelFormatVersion) {
        throw DataError("model file: unsupported format_version " + std::to_string(version) +
                        " (this build reads version " + std::to_string(kModelFormatVersion) + ")");
    }
    ModelArtifact model;
    try {
        model.format_version = version;
        model.geometry = geometry_from_json(j.at("geometry"));
        model.config = detail::config_from_json(j.at("config"));
        model.seed = j.at("seed").get<std::uint64_t>();
        model.best_test_mse = j.at("best_test_mse").get<double>();
        model.best_run = j.at("best_run").get<int>();
        model.best_iteration = j.at("best_iteration").get<int>();
        model.truncated = j.at("truncated").get<bool>();
        model.train_flc = detail::vector_from_json(j.at("train_flc"));
        model.weights.entries = detail::matrix_from_json(j.at("weights"));
        model.trace = detail::trace_from_json(j.at("trace"));

        const auto& states = j.at("states");
        detail::require(model.weights.entries.cols() == static_cast<Eigen::Index>(states.size()),
                        "model file: weight columns do not match state count");
        detail::require(model.weights.entries.rows() == model.train_flc.size(),
                        "model file: weight rows do not match training sample count");
        Eigen::Index col = 0;
        for (const auto& s : states) {
            KdeComponent kde{WeightedSample1D{model.train_flc, model.weights.entries.col(col)},
                             s.at("bandwidth").get<double>(),
                             s.at("effective_size").get<double>()};
            GaussianComponent gaussian(detail::vector_from_json(s.at("mean")),
                                       detail::matrix_from_json(s.at("covariance")));
            model.ensemble.states.push_back(ModelState{std::move(gaussian), std::move(kde),
                                                       s.at("prior").get<double>(),
                                                       s.at("effective_size").get<double>(),
                                                       s.at("bandwidth_fallback").get<bool>(),
                                                       false});
            ++col;
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model file: ") + e.what());
    }
    model.weights.validate();
    model.ensemble.validate();
    return model;
}

inline void save_model(const ModelArtifact& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << model_to_json(model).dump(1) << '\n';
    if (!out) throw DataError("write failed: " + path);
}

inline ModelArtifact load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model file " + path + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace statecast
