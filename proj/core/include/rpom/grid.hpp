#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "rpom/error.hpp"

namespace rpom {

/// Uniform cell-centered grid over [0, lx] x [0, ly] with nx x ny cells.
struct Grid {
    int nx = 0;
    int ny = 0;
    double lx = 1.0;
    double ly = 1.0;

    double dx() const { return lx / nx; }
    double dy() const { return ly / ny; }
    double cell_area() const { return dx() * dy(); }
    std::size_t cells() const { return static_cast<std::size_t>(nx) * ny; }

    double xc(int i) const { return (i + 0.5) * dx(); }
    double yc(int j) const { return (j + 0.5) * dy(); }

    bool operator==(const Grid& o) const {
        return nx == o.nx && ny == o.ny && lx == o.lx && ly == o.ly;
    }

    bool same_domain(const Grid& o) const { return lx == o.lx && ly == o.ly; }
};

/// Cell-centered scalar field, row-major with x fastest: v[j*nx + i].
struct Field {
    int nx = 0;
    int ny = 0;
    std::vector<double> v;

    Field() = default;
    Field(int nx_, int ny_, double fill = 0.0)
        : nx(nx_), ny(ny_), v(static_cast<std::size_t>(nx_) * ny_, fill) {}

    double& operator()(int i, int j) { return v[static_cast<std::size_t>(j) * nx + i]; }
    double operator()(int i, int j) const { return v[static_cast<std::size_t>(j) * nx + i]; }

    std::size_t size() const { return v.size(); }

    double min() const {
        double m = v.empty() ? 0.0 : v[0];
        for (double x : v) m = std::min(m, x);
        return m;
    }
    double max() const {
        double m = v.empty() ? 0.0 : v[0];
        for (double x : v) m = std::max(m, x);
        return m;
    }
    bool finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

/// Face-normal velocities on a MAC layout: u lives on vertical faces
/// ((nx+1) x ny), v on horizontal faces (nx x (ny+1)).
struct FaceVelocity {
    int nx = 0;
    int ny = 0;
    std::vector<double> u;
    std::vector<double> v;

    FaceVelocity() = default;
    FaceVelocity(int nx_, int ny_)
        : nx(nx_),
          ny(ny_),
          u(static_cast<std::size_t>(nx_ + 1) * ny_, 0.0),
          v(static_cast<std::size_t>(nx_) * (ny_ + 1), 0.0) {}

    double& u_at(int i, int j) { return u[static_cast<std::size_t>(j) * (nx + 1) + i]; }
    double u_at(int i, int j) const { return u[static_cast<std::size_t>(j) * (nx + 1) + i]; }
    double& v_at(int i, int j) { return v[static_cast<std::size_t>(j) * nx + i]; }
    double v_at(int i, int j) const { return v[static_cast<std::size_t>(j) * nx + i]; }

    double max_abs() const {
        double m = 0.0;
        for (double x : u) m = std::max(m, std::abs(x));
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    }
};

} // namespace rpom
