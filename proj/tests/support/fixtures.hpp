#pragma once

#include "dpg/linear_system.hpp"
#include "dpg/oracle.hpp"

#include <initializer_list>
#include <string>

namespace fx {

using Mat = dpg::Matrix<double>;
using Vec = dpg::Vector<double>;

inline Mat mat(std::initializer_list<std::initializer_list<double>> rows) {
    Mat M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        Eigen::Index j = 0;
        for (double v : row) {
            M(i, j++) = v;
        }
        ++i;
    }
    return M;
}

inline Vec vec(std::initializer_list<double> v) {
    Vec x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) {
        x(i++) = e;
    }
    return x;
}

// The unstable two-state, one-input plant used throughout.
inline dpg::LinearSystem<double> plant_2d() { return {mat({{4, 3}, {3, 1.5}}), mat({{2}, {2}})}; }
inline dpg::CostModel<double> cost_2d() { return {Mat::Identity(2, 2), mat({{2}})}; }

// x+ = 2x + u, q = r = 1.
inline dpg::LinearSystem<double> scalar_plant() { return {mat({{2}}), mat({{1}})}; }
inline dpg::CostModel<double> scalar_cost() { return {mat({{1}}), mat({{1}})}; }

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

inline std::string source_path(const std::string& rel) { return std::string(DPG_SOURCE_DIR) + "/" + rel; }

} // namespace fx
