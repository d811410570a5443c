#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "statecast/errors.hpp"

namespace statecast {

enum class Boundary { periodic, truncate };

inline std::string to_string(Boundary b) {
    return b == Boundary::periodic ? "periodic" : "truncate";
}

inline Boundary boundary_from_string(const std::string& s) {
    if (s == "periodic") return Boundary::periodic;
    if (s == "truncate") return Boundary::truncate;
    throw DataError("unknown boundary mode: '" + s + "' (expected periodic or truncate)");
}

/// Lattice and cone geometry of a (1+1)D space-time field.
///
/// Sites are numbered 1..spatial_size and times 1..time_steps. `speed` is the
/// propagation speed in sites per time step, `past_horizon`/`future_horizon`
/// bound the cone depth. Only 1D space is supported; the struct is kept flat
/// so a later 2D extension can swap spatial_size for a shape vector without
/// touching the operations.
struct FieldGeometry {
    int spatial_size = 0;
    int time_steps = 0;
    Boundary boundary = Boundary::periodic;
    int speed = 1;
    int past_horizon = 1;
    int future_horizon = 0;

    void validate() const {
        detail::require(spatial_size >= 1, "geometry: spatial_size must be positive");
        detail::require(time_steps >= 1, "geometry: time_steps must be positive");
        detail::require(speed >= 1, "geometry: speed must be positive");
        detail::require(past_horizon >= 0, "geometry: past_horizon must be non-negative");
        detail::require(future_horizon >= 0, "geometry: future_horizon must be non-negative");
        if (boundary == Boundary::periodic) {
            detail::require(spatial_size > 2 * speed * past_horizon,
                            "geometry: periodic boundary requires spatial_size > 2*speed*past_horizon "
                            "(cone must not wrap onto itself)");
        }
    }

    /// True when two geometries produce identically shaped light cones.
    bool cone_compatible(const FieldGeometry& other) const {
        return boundary == other.boundary && speed == other.speed &&
               past_horizon == other.past_horizon && future_horizon == other.future_horizon;
    }

    long point_count() const { return static_cast<long>(spatial_size) * time_steps; }
};

/// An observed real-valued field X(r, t): one row per site, one column per
/// time step.
struct Field {
    FieldGeometry geometry;
    Eigen::MatrixXd values;

    void validate() const {
        geometry.validate();
        detail::require(values.rows() == geometry.spatial_size && values.cols() == geometry.time_steps,
                        "field: value matrix shape does not match geometry");
        detail::require(values.allFinite(), "field: values must all be finite");
    }
};

/// Aligned past/future light-cone configurations extracted from a field.
///
/// Row i holds the past cone of the space-time point index_map[i], laid out
/// oldest slice first and, within a slice, leftmost spatial offset first.
/// The future cone follows the same convention starting at the point itself;
/// with future_horizon == 0 it is exactly the field value at the point.
/// margin_mask runs over all points in canonical order (time-major) and is
/// true for points that did not yield a row.
struct LightConeSet {
    Eigen::MatrixXd plc;
    Eigen::MatrixXd flc;
    std::vector<std::pair<int, int>> index_map;  // (site, time), 1-based
    std::vector<bool> margin_mask;
    FieldGeometry geometry;

    Eigen::Index rows() const { return plc.rows(); }
};

/// Canonical linear index of a space-time point: time-major, 1-based.
/// Guarantees that a point's past cone only references lower indices.
inline long canonical_index(int r, int t, const FieldGeometry& g) {
    detail::require(r >= 1 && r <= g.spatial_size, "canonical_index: site out of range");
    detail::require(t >= 1 && t <= g.time_steps, "canonical_index: time out of range");
    return static_cast<long>(t - 1) * g.spatial_size + r;
}

/// Number of cells in a past light cone: sum over past slices s=1..h_p of the
/// 2*c*s + 1 sites reachable at that depth. The present is not included.
inline int plc_dimension(const FieldGeometry& g) {
    detail::require(g.past_horizon >= 1, "plc_dimension: past_horizon must be at least 1");
    int dim = 0;
    for (int s = 1; s <= g.past_horizon; ++s) dim += 2 * g.speed * s + 1;
    return dim;
}

/// Number of cells in a future light cone, the present included. 1 when
/// future_horizon == 0.
inline int flc_dimension(const FieldGeometry& g) {
    int dim = 0;
    for (int s = 0; s <= g.future_horizon; ++s) dim += 2 * g.speed * s + 1;
    return dim;
}

namespace detail {

inline int wrap_site(int r, int spatial_size) {
    int m = (r - 1) % spatial_size;
    if (m < 0) m += spatial_size;
    return m + 1;
}

// A point has a row iff its whole past and future cones lie on the lattice.
inline bool cone_observed(int r, int t, const FieldGeometry& g) {
    if (t - g.past_horizon < 1 || t + g.future_horizon > g.time_steps) return false;
    if (g.boundary == Boundary::truncate) {
        int reach = g.speed * std::max(g.past_horizon, g.future_horizon);
        if (r - reach < 1 || r + reach > g.spatial_size) return false;
    }
    return true;
}

}  // namespace detail

/// Extracts one (past cone, future cone) row per fully observed space-time
/// point, in canonical index order. Deterministic and layout-stable.
inline LightConeSet extract_light_cones(const Field& field, const FieldGeometry& geometry) {
    field.validate();
    detail::require(field.geometry.spatial_size == geometry.spatial_size &&
                        field.geometry.time_steps == geometry.time_steps &&
                        field.geometry.cone_compatible(geometry),
                    "extract_light_cones: field and geometry disagree");
    detail::require(geometry.past_horizon >= 1,
                    "extract_light_cones: past_horizon must be at least 1");

    const int S = geometry.spatial_size;
    const int T = geometry.time_steps;
    const int c = geometry.speed;
    const int d_plc = plc_dimension(geometry);
    const int d_flc = flc_dimension(geometry);

    long n = 0;
    for (int t = 1; t <= T; ++t)
        for (int r = 1; r <= S; ++r)
            if (detail::cone_observed(r, t, geometry)) ++n;

    LightConeSet cones;
    cones.geometry = geometry;
    cones.plc.resize(n, d_plc);
    cones.flc.resize(n, d_flc);
    cones.index_map.reserve(static_cast<std::size_t>(n));
    cones.margin_mask.assign(static_cast<std::size_t>(geometry.point_count()), true);

    long row = 0;
    for (int t = 1; t <= T; ++t) {
        for (int r = 1; r <= S; ++r) {
            if (!detail::cone_observed(r, t, geometry)) continue;
            cones.margin_mask[static_cast<std::size_t>(canonical_index(r, t, geometry) - 1)] = false;
            int col = 0;
            for (int s = geometry.past_horizon; s >= 1; --s) {
                for (int o = -c * s; o <= c * s; ++o) {
                    cones.plc(row, col++) =
                        field.values(detail::wrap_site(r + o, S) - 1, t - s - 1);
                }
            }
            col = 0;
            for (int s = 0; s <= geometry.future_horizon; ++s) {
                for (int o = -c * s; o <= c * s; ++o) {
                    cones.flc(row, col++) =
                        field.values(detail::wrap_site(r + o, S) - 1, t + s - 1);
                }
            }
            cones.index_map.emplace_back(r, t);
            ++row;
        }
    }
    return cones;
}

inline LightConeSet extract_light_cones(const Field& field) {
    return extract_light_cones(field, field.geometry);
}

namespace detail {

inline LightConeSet subset_by_rows(const LightConeSet& cones, const std::vector<long>& rows) {
    LightConeSet out;
    out.geometry = cones.geometry;
    out.plc.resize(static_cast<Eigen::Index>(rows.size()), cones.plc.cols());
    out.flc.resize(static_cast<Eigen::Index>(rows.size()), cones.flc.cols());
    out.index_map.reserve(rows.size());
    out.margin_mask.assign(cones.margin_mask.size(), true);
    long i = 0;
    for (long r : rows) {
        out.plc.row(i) = cones.plc.row(r);
        out.flc.row(i) = cones.flc.row(r);
        const auto& rt = cones.index_map[static_cast<std::size_t>(r)];
        out.index_map.push_back(rt);
        out.margin_mask[static_cast<std::size_t>(canonical_index(rt.first, rt.second, cones.geometry) - 1)] =
            false;
        ++i;
    }
    return out;
}

}  // namespace detail

/// Splits a cone set along the time axis: rows with t <= cut go to the
/// training side, the rest to the test side, where cut is fraction*T rounded
/// to the nearest time step. Either side coming out empty is an error.
inline std::pair<LightConeSet, LightConeSet> split_train_test(const LightConeSet& cones,
                                                              double fraction) {
    detail::require(fraction > 0.0 && fraction < 1.0,
                    "split_train_test: fraction must lie in (0, 1)");
    const int cut = static_cast<int>(std::llround(fraction * cones.geometry.time_steps));
    std::vector<long> train_rows, test_rows;
    for (long i = 0; i < cones.rows(); ++i) {
        if (cones.index_map[static_cast<std::size_t>(i)].second <= cut)
            train_rows.push_back(i);
        else
            test_rows.push_back(i);
    }
    detail::require(!train_rows.empty(), "split_train_test: training side is empty");
    detail::require(!test_rows.empty(), "split_train_test: test side is empty");
    return {detail::subset_by_rows(cones, train_rows), detail::subset_by_rows(cones, test_rows)};
}

}  // namespace statecast
