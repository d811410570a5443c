#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include <json.hpp>

#include "statecast/field.hpp"

namespace statecast {

namespace detail {

/// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& token, int row, int col) {
    double v = 0.0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end != begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
    auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end) {
        throw DataError("field csv: cannot parse value at row " + std::to_string(row) +
                        ", column " + std::to_string(col) + ": '" + token + "'");
    }
    return v;
}

}  // namespace detail

/// Path of the sidecar metadata file for a field CSV: "x.csv" -> "x.meta.json".
inline std::string meta_path_for(const std::string& csv_path) {
    const std::string suffix = ".csv";
    if (csv_path.size() > suffix.size() &&
        csv_path.compare(csv_path.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return csv_path.substr(0, csv_path.size() - suffix.size()) + ".meta.json";
    }
    return csv_path + ".meta.json";
}

inline nlohmann::ordered_json geometry_to_json(const FieldGeometry& g) {
    return nlohmann::ordered_json{{"spatial_size", g.spatial_size},
                                  {"time_steps", g.time_steps},
                                  {"boundary", to_string(g.boundary)},
                                  {"speed", g.speed},
                                  {"past_horizon", g.past_horizon},
                                  {"future_horizon", g.future_horizon}};
}

inline FieldGeometry geometry_from_json(const nlohmann::json& j) {
    FieldGeometry g;
    try {
        g.spatial_size = j.at("spatial_size").get<int>();
        g.time_steps = j.at("time_steps").get<int>();
        g.boundary = boundary_from_string(j.at("boundary").get<std::string>());
        g.speed = j.at("speed").get<int>();
        g.past_horizon = j.at("past_horizon").get<int>();
        g.future_horizon = j.at("future_horizon").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("field metadata: ") + e.what());
    }
    return g;
}

/// Writes a matrix as a plain CSV (no header), rows = sites, columns = times.
inline void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out << ',';
            out << detail::format_double(m(r, c));
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

inline void write_matrix_csv(const Eigen::MatrixXi& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out << ',';
            out << m(r, c);
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

inline Eigen::MatrixXd read_matrix_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open field csv: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string token;
        int col = 0;
        while (std::getline(ss, token, ',')) {
            ++col;
            vals.push_back(detail::parse_double(token, row, col));
        }
        if (!rows.empty() && vals.size() != rows.front().size()) {
            throw DataError("field csv: row " + std::to_string(row) + " has " +
                            std::to_string(vals.size()) + " columns, expected " +
                            std::to_string(rows.front().size()));
        }
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw DataError("field csv is empty: " + path);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.front().size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    return m;
}

/// Writes field values plus the sidecar metadata JSON.
inline void write_field(const Field& field, const std::string& csv_path) {
    field.validate();
    write_matrix_csv(field.values, csv_path);
    std::ofstream meta(meta_path_for(csv_path), std::ios::binary);
    if (!meta) throw DataError("cannot open for writing: " + meta_path_for(csv_path));
    meta << geometry_to_json(field.geometry).dump(2) << '\n';
    if (!meta) throw DataError("write failed: " + meta_path_for(csv_path));
}

/// Reads a field CSV and its sidecar metadata, validating shape against it.
inline Field read_field(const std::string& csv_path) {
    std::ifstream meta(meta_path_for(csv_path), std::ios::binary);
    if (!meta) throw DataError("cannot open field metadata: " + meta_path_for(csv_path));
    nlohmann::json j;
    try {
        meta >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("field metadata " + meta_path_for(csv_path) + ": " + e.what());
    }
    Field field;
    field.geometry = geometry_from_json(j);
    field.values = read_matrix_csv(csv_path);
    if (field.values.rows() != field.geometry.spatial_size ||
        field.values.cols() != field.geometry.time_steps) {
        throw DataError("field csv " + csv_path + ": shape " + std::to_string(field.values.rows()) +
                        "x" + std::to_string(field.values.cols()) +
                        " does not match metadata " + std::to_string(field.geometry.spatial_size) +
                        "x" + std::to_string(field.geometry.time_steps));
    }
    field.validate();
    return field;
}

}  // namespace statecast
