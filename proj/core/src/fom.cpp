#include "rpom/fom.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>

namespace rpom::fom {

namespace {

// Resolved temperature condition at one boundary face.
struct FaceBc {
    bool dirichlet;
    double value;
};

FaceBc resolve_bc(const TemperatureBc& bc, double s) {
    if (bc.has_segment && s >= bc.seg_lo && s <= bc.seg_hi) return {true, bc.seg_value};
    if (bc.dirichlet) return {true, bc.value};
    return {false, 0.0};
}

// Jacobi-preconditioned conjugate gradients for an SPD operator given as a
// matvec closure plus its diagonal. The stopping test bounds the pointwise
// residual |r|_inf <= tol so that downstream contracts (face divergence,
// per-cell heat balance) hold in absolute terms; a small multiple of machine
// epsilon times |b|_inf keeps unattainable tolerances from spinning forever.
template <typename Apply>
void pcg(const Apply& apply, const std::vector<double>& diag, const std::vector<double>& b,
         std::vector<double>& x, double tol, int max_iter, const char* what) {
    const std::size_t n = b.size();
    double binf = 0.0;
    for (double v : b) binf = std::max(binf, std::abs(v));
    if (binf == 0.0) {
        std::fill(x.begin(), x.end(), 0.0);
        return;
    }
    const double threshold =
        std::max(tol, 64.0 * std::numeric_limits<double>::epsilon() * binf);

    std::vector<double> r(n), z(n), p(n), ap(n);
    apply(x, ap);
    for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - ap[i];
    for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diag[i];
    p = z;
    double rz = 0.0;
    for (std::size_t i = 0; i < n; ++i) rz += r[i] * z[i];

    for (int it = 0; it < max_iter; ++it) {
        double rinf = 0.0;
        for (double v : r) rinf = std::max(rinf, std::abs(v));
        if (rinf <= threshold) return;

        apply(p, ap);
        double pap = 0.0;
        for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
        if (pap <= 0.0) fail(Errc::NoConvergence, std::string(what) + ": operator lost definiteness");
        double alpha = rz / pap;
        for (std::size_t i = 0; i < n; ++i) x[i] += alpha * p[i];
        for (std::size_t i = 0; i < n; ++i) r[i] -= alpha * ap[i];
        for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diag[i];
        double rz_new = 0.0;
        for (std::size_t i = 0; i < n; ++i) rz_new += r[i] * z[i];
        double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }
    fail(Errc::NoConvergence, std::string(what) + ": iteration budget exhausted");
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Buoyancy Ra*T averaged onto the interior horizontal face between
// cells (i,j) and (i,j+1).
double face_buoyancy(const Field& t, const Field& ra, int i, int j) {
    return 0.5 * (ra(i, j) * t(i, j) + ra(i, j + 1) * t(i, j + 1));
}

} // namespace

void Scenario::validate() const {
    require(grid.nx >= 4 && grid.ny >= 4, Errc::ConfigError, "scenario: grid must be at least 4x4");
    require(grid.lx > 0.0 && grid.ly > 0.0, Errc::ConfigError, "scenario: domain extents must be positive");
    for (int s = 0; s < 4; ++s) {
        const TemperatureBc& bc = temperature_bc[s];
        if (!bc.has_segment) continue;
        double len = (s <= 1) ? grid.ly : grid.lx;  // left/right run along y
        require(bc.seg_lo >= 0.0 && bc.seg_hi <= len && bc.seg_lo < bc.seg_hi, Errc::ConfigError,
                "scenario: heated segment must lie on the boundary");
    }
    if (has_subdomain) {
        require(sub_x0 >= 0.0 && sub_x1 <= grid.lx && sub_y0 >= 0.0 && sub_y1 <= grid.ly &&
                    sub_x0 < sub_x1 && sub_y0 < sub_y1,
                Errc::ConfigError, "scenario: subdomain rectangle must lie inside the domain");
    }
}

Scenario Scenario::heated_side(int nx, int ny) {
    Scenario sc;
    sc.name = "heated_side";
    sc.grid = {nx, ny, 1.0, 1.0};
    sc.bc(Side::left) = TemperatureBc::fixed(1.0);
    sc.bc(Side::right) = TemperatureBc::fixed(0.0);
    sc.validate();
    return sc;
}

Scenario Scenario::elder(int nx, int ny) {
    Scenario sc;
    sc.name = "elder";
    sc.grid = {nx, ny, 2.0, 1.0};
    TemperatureBc bottom;
    bottom.has_segment = true;
    bottom.seg_lo = 0.5;
    bottom.seg_hi = 1.5;
    bottom.seg_value = 1.0;
    sc.bc(Side::bottom) = bottom;
    sc.bc(Side::top) = TemperatureBc::fixed(0.0);
    sc.validate();
    return sc;
}

Scenario Scenario::modified_elder(int nx, int ny) {
    Scenario sc = elder(nx, ny);
    sc.name = "modified_elder";
    sc.has_subdomain = true;
    sc.sub_x0 = sc.grid.lx * 0.5 - sc.grid.lx / 8.0;
    sc.sub_x1 = sc.grid.lx * 0.5 + sc.grid.lx / 8.0;
    sc.sub_y0 = sc.grid.ly * 0.5 - sc.grid.ly / 8.0;
    sc.sub_y1 = sc.grid.ly * 0.5 + sc.grid.ly / 8.0;
    sc.validate();
    return sc;
}

void SolverParams::validate() const {
    require(dt0 > 0.0 && dt0 <= dt_max, Errc::ConfigError, "solver: need 0 < dt0 <= dt_max");
    require(cfl > 0.0, Errc::ConfigError, "solver: cfl must be positive");
    require(t_end > 0.0, Errc::ConfigError, "solver: t_end must be positive");
    require(bdf_order >= 1 && bdf_order <= 4, Errc::UnsupportedOrder, "solver: bdf order in 1..4");
    require(ra1 > 0.0 && ra2 > 0.0, Errc::ConfigError, "solver: Ra values must be positive");
}

double rayleigh_number(double g, double alpha, double kappa, double dT, double H, double K) {
    for (double v : {g, alpha, kappa, dT, H, K})
        require(v > 0.0, Errc::NonPositive, "rayleigh_number: all arguments must be positive");
    return g * alpha * kappa * dT * H / K;
}

double adaptive_dt(double u_max_norm, double h_cell, double cfl, double dt_max) {
    if (u_max_norm == 0.0) return dt_max;
    return std::min(cfl * h_cell / u_max_norm, dt_max);
}

BdfCoefficients bdf_coefficients(int m, double dt) {
    require(m >= 1 && m <= 4, Errc::UnsupportedOrder, "bdf_coefficients: order must be in 1..4");
    BdfCoefficients c{};
    c.order = m;
    switch (m) {
        case 1:
            c.current = 1.0 / dt;
            c.history = {-1.0 / dt, 0.0, 0.0, 0.0};
            break;
        case 2:
            c.current = 3.0 / (2.0 * dt);
            c.history = {-4.0 / (2.0 * dt), 1.0 / (2.0 * dt), 0.0, 0.0};
            break;
        case 3:
            c.current = 11.0 / (6.0 * dt);
            c.history = {-18.0 / (6.0 * dt), 9.0 / (6.0 * dt), -2.0 / (6.0 * dt), 0.0};
            break;
        default:
            c.current = 25.0 / (12.0 * dt);
            c.history = {-48.0 / (12.0 * dt), 36.0 / (12.0 * dt), -16.0 / (12.0 * dt),
                         3.0 / (12.0 * dt)};
            break;
    }
    return c;
}

Field rayleigh_field(const Scenario& sc, double ra1, double ra2) {
    const Grid& g = sc.grid;
    Field ra(g.nx, g.ny, ra1);
    if (sc.has_subdomain) {
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i)
                if (g.xc(i) >= sc.sub_x0 && g.xc(i) <= sc.sub_x1 && g.yc(j) >= sc.sub_y0 &&
                    g.yc(j) <= sc.sub_y1)
                    ra(i, j) = ra2;
    }
    return ra;
}

Field poisson_neumann(const Field& rhs, const Grid& grid, double tol, int max_iter) {
    require(grid.nx >= 4 && grid.ny >= 4, Errc::ShapeMismatch, "poisson: grid must be at least 4x4");
    require(rhs.nx == grid.nx && rhs.ny == grid.ny, Errc::ShapeMismatch, "poisson: rhs shape");
    const int nx = grid.nx, ny = grid.ny;
    const double idx2 = 1.0 / (grid.dx() * grid.dx());
    const double idy2 = 1.0 / (grid.dy() * grid.dy());
    const std::size_t n = grid.cells();

    // Remove the incompatible component of the rhs, then solve the
    // rank-one-shifted SPD system; the shift never activates on the
    // mean-free Krylov space but keeps CG well defined.
    std::vector<double> b = rhs.v;
    double bm = mean_of(b);
    for (double& v : b) v -= bm;

    std::vector<double> diag(n, 1.0 / static_cast<double>(n));
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            double d = 0.0;
            if (i > 0) d += idx2;
            if (i < nx - 1) d += idx2;
            if (j > 0) d += idy2;
            if (j < ny - 1) d += idy2;
            diag[static_cast<std::size_t>(j) * nx + i] += d;
        }

    auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
        double xm = mean_of(x);
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                std::size_t c = static_cast<std::size_t>(j) * nx + i;
                double xc = x[c];
                double s = xm;
                if (i > 0) s += idx2 * (xc - x[c - 1]);
                if (i < nx - 1) s += idx2 * (xc - x[c + 1]);
                if (j > 0) s += idy2 * (xc - x[c - nx]);
                if (j < ny - 1) s += idy2 * (xc - x[c + nx]);
                y[c] = s;
            }
        }
    };

    Field p(nx, ny, 0.0);
    pcg(apply, diag, b, p.v, tol, max_iter, "poisson_neumann");
    double pm = mean_of(p.v);
    for (double& v : p.v) v -= pm;
    return p;
}

namespace {

// rhs handed to poisson_neumann, which applies A = -lap. Substituting the
// Darcy face velocities into the cell divergence gives
//   A(p) = -(b_N - b_S)/dy - (prescribed outward wall fluxes)/h,
// with buoyancy b only on interior horizontal faces.
Field pressure_rhs(const Field& t, const Field& ra, const Scenario& sc) {
    const Grid& g = sc.grid;
    const int nx = g.nx, ny = g.ny;
    Field rhs(nx, ny, 0.0);
    const double idx = 1.0 / g.dx(), idy = 1.0 / g.dy();
    const double qw = sc.normal_flux[static_cast<int>(Side::left)];
    const double qe = sc.normal_flux[static_cast<int>(Side::right)];
    const double qs = sc.normal_flux[static_cast<int>(Side::bottom)];
    const double qn = sc.normal_flux[static_cast<int>(Side::top)];

    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            double r = 0.0;
            if (j < ny - 1) r -= face_buoyancy(t, ra, i, j) * idy;
            else r -= qn * idy;
            if (j > 0) r += face_buoyancy(t, ra, i, j - 1) * idy;
            else r -= qs * idy;
            if (i == nx - 1) r -= qe * idx;
            if (i == 0) r -= qw * idx;
            rhs(i, j) = r;
        }
    }
    return rhs;
}

} // namespace

Field solve_pressure(const Field& temperature, const Field& ra, const Scenario& sc,
                     const SolverParams& params) {
    require(temperature.finite(), Errc::NonFinite, "solve_pressure: temperature not finite");
    require(temperature.nx == sc.grid.nx && temperature.ny == sc.grid.ny, Errc::ShapeMismatch,
            "solve_pressure: temperature shape");
    Field rhs = pressure_rhs(temperature, ra, sc);
    return poisson_neumann(rhs, sc.grid, params.poisson_tol, params.poisson_max_iter);
}

FaceVelocity compute_velocity(const Field& pressure, const Field& temperature, const Field& ra,
                              const Scenario& sc) {
    const Grid& g = sc.grid;
    require(pressure.nx == g.nx && pressure.ny == g.ny && temperature.nx == g.nx &&
                temperature.ny == g.ny,
            Errc::ShapeMismatch, "compute_velocity: field shape");
    const int nx = g.nx, ny = g.ny;
    const double idx = 1.0 / g.dx(), idy = 1.0 / g.dy();
    FaceVelocity vel(nx, ny);

    for (int j = 0; j < ny; ++j) {
        vel.u_at(0, j) = -sc.normal_flux[static_cast<int>(Side::left)];
        vel.u_at(nx, j) = sc.normal_flux[static_cast<int>(Side::right)];
        for (int i = 1; i < nx; ++i)
            vel.u_at(i, j) = -(pressure(i, j) - pressure(i - 1, j)) * idx;
    }
    for (int i = 0; i < nx; ++i) {
        vel.v_at(i, 0) = -sc.normal_flux[static_cast<int>(Side::bottom)];
        vel.v_at(i, ny) = sc.normal_flux[static_cast<int>(Side::top)];
        for (int j = 1; j < ny; ++j)
            vel.v_at(i, j) = -(pressure(i, j) - pressure(i, j - 1)) * idy +
                             face_buoyancy(temperature, ra, i, j - 1);
    }
    return vel;
}

double max_divergence(const FaceVelocity& vel, const Grid& grid) {
    const int nx = grid.nx, ny = grid.ny;
    const double idx = 1.0 / grid.dx(), idy = 1.0 / grid.dy();
    double worst = 0.0;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            double div = (vel.u_at(i + 1, j) - vel.u_at(i, j)) * idx +
                         (vel.v_at(i, j + 1) - vel.v_at(i, j)) * idy;
            worst = std::max(worst, std::abs(div));
        }
    return worst;
}

namespace {

// Upwind advective divergence of T in conservative flux form.
Field advection_term(const Field& t, const FaceVelocity& vel, const Scenario& sc) {
    const Grid& g = sc.grid;
    const int nx = g.nx, ny = g.ny;
    const double idx = 1.0 / g.dx(), idy = 1.0 / g.dy();
    const double dx = g.dx(), dy = g.dy();

    auto upwind_x = [&](int iface, int j) {
        double u = vel.u_at(iface, j);
        if (iface == 0) {
            if (u <= 0.0) return u * t(0, j);  // outflow through the left wall
            FaceBc bc = resolve_bc(sc.bc(Side::left), (j + 0.5) * dy);
            return u * (bc.dirichlet ? bc.value : t(0, j));
        }
        if (iface == nx) {
            if (u >= 0.0) return u * t(nx - 1, j);
            FaceBc bc = resolve_bc(sc.bc(Side::right), (j + 0.5) * dy);
            return u * (bc.dirichlet ? bc.value : t(nx - 1, j));
        }
        return u * (u >= 0.0 ? t(iface - 1, j) : t(iface, j));
    };
    auto upwind_y = [&](int i, int jface) {
        double v = vel.v_at(i, jface);
        if (jface == 0) {
            if (v <= 0.0) return v * t(i, 0);
            FaceBc bc = resolve_bc(sc.bc(Side::bottom), (i + 0.5) * dx);
            return v * (bc.dirichlet ? bc.value : t(i, 0));
        }
        if (jface == ny) {
            if (v >= 0.0) return v * t(i, ny - 1);
            FaceBc bc = resolve_bc(sc.bc(Side::top), (i + 0.5) * dx);
            return v * (bc.dirichlet ? bc.value : t(i, ny - 1));
        }
        return v * (v >= 0.0 ? t(i, jface - 1) : t(i, jface));
    };

    Field adv(nx, ny, 0.0);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            adv(i, j) = (upwind_x(i + 1, j) - upwind_x(i, j)) * idx +
                        (upwind_y(i, j + 1) - upwind_y(i, j)) * idy;
    return adv;
}

} // namespace

Field advance_temperature(std::span<const Field> history, const FaceVelocity& vel,
                          const Scenario& sc, double dt, int order, double source, double tol,
                          int max_iter) {
    require(order >= 1 && order <= 4, Errc::UnsupportedOrder, "advance_temperature: order in 1..4");
    require(static_cast<int>(history.size()) >= order, Errc::ShapeMismatch,
            "advance_temperature: need at least `order` history fields");
    require(dt > 0.0, Errc::ConfigError, "advance_temperature: dt must be positive");

    const Grid& g = sc.grid;
    const int nx = g.nx, ny = g.ny;
    const double idx2 = 1.0 / (g.dx() * g.dx());
    const double idy2 = 1.0 / (g.dy() * g.dy());
    const double dx = g.dx(), dy = g.dy();
    const std::size_t n = g.cells();

    BdfCoefficients bdf = bdf_coefficients(order, dt);

    // rhs: BDF history, explicit upwind advection lagged at the given
    // velocity, the source, and Dirichlet diffusion contributions.
    Field adv = advection_term(history[0], vel, sc);
    std::vector<double> rhs(n, 0.0);
    for (int k = 0; k < order; ++k) {
        double ck = bdf.history[k];
        const Field& h = history[k];
        for (std::size_t c = 0; c < n; ++c) rhs[c] -= ck * h.v[c];
    }
    for (std::size_t c = 0; c < n; ++c) rhs[c] += source - adv.v[c];

    // Per-cell diagonal augmentation from Dirichlet faces, assembled once.
    std::vector<double> diag(n, bdf.current);
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            std::size_t c = static_cast<std::size_t>(j) * nx + i;
            double d = 0.0;
            if (i > 0) d += idx2;
            if (i < nx - 1) d += idx2;
            if (j > 0) d += idy2;
            if (j < ny - 1) d += idy2;
            if (i == 0) {
                FaceBc bc = resolve_bc(sc.bc(Side::left), (j + 0.5) * dy);
                if (bc.dirichlet) { d += 2.0 * idx2; rhs[c] += 2.0 * idx2 * bc.value; }
            }
            if (i == nx - 1) {
                FaceBc bc = resolve_bc(sc.bc(Side::right), (j + 0.5) * dy);
                if (bc.dirichlet) { d += 2.0 * idx2; rhs[c] += 2.0 * idx2 * bc.value; }
            }
            if (j == 0) {
                FaceBc bc = resolve_bc(sc.bc(Side::bottom), (i + 0.5) * dx);
                if (bc.dirichlet) { d += 2.0 * idy2; rhs[c] += 2.0 * idy2 * bc.value; }
            }
            if (j == ny - 1) {
                FaceBc bc = resolve_bc(sc.bc(Side::top), (i + 0.5) * dx);
                if (bc.dirichlet) { d += 2.0 * idy2; rhs[c] += 2.0 * idy2 * bc.value; }
            }
            diag[c] = bdf.current + d;
        }
    }

    auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                std::size_t c = static_cast<std::size_t>(j) * nx + i;
                double s = diag[c] * x[c];
                if (i > 0) s -= idx2 * x[c - 1];
                if (i < nx - 1) s -= idx2 * x[c + 1];
                if (j > 0) s -= idy2 * x[c - nx];
                if (j < ny - 1) s -= idy2 * x[c + nx];
                y[c] = s;
            }
        }
    };

    Field t_new = history[0];  // warm start from the previous field
    pcg(apply, diag, rhs, t_new.v, tol, max_iter, "advance_temperature");
    require(t_new.finite(), Errc::NonFinite, "advance_temperature: produced non-finite field");
    return t_new;
}

Trajectory run_simulation(const Scenario& sc, const SolverParams& params,
                          std::span<const double> mu) {
    sc.validate();
    params.validate();

    double ra1 = params.ra1, ra2 = params.ra2;
    if (mu.size() >= 1) ra1 = mu[0];
    if (mu.size() >= 2) ra2 = mu[1];
    if (mu.size() == 1 && !sc.has_subdomain) ra2 = ra1;
    require(ra1 > 0.0 && ra2 > 0.0, Errc::NonPositive, "run_simulation: Ra must be positive");
    Field ra = rayleigh_field(sc, ra1, ra2);

    const Grid& g = sc.grid;
    const double h_cell = std::min(g.dx(), g.dy());

    Trajectory traj;
    traj.mu.assign(mu.begin(), mu.end());
    traj.grid = g;

    Field t0(g.nx, g.ny, sc.initial_temperature);
    Field p = solve_pressure(t0, ra, sc, params);
    FaceVelocity vel = compute_velocity(p, t0, ra, sc);

    auto record = [&](double t, const Field& temp, const Field& press, const FaceVelocity& v) {
        traj.timestamps.push_back(t);
        traj.temperature.push_back(temp);
        if (params.store_flow) {
            traj.pressure.push_back(press);
            traj.velocity.push_back(v);
        }
    };
    record(0.0, t0, p, vel);

    std::deque<Field> history;  // most recent first
    history.push_front(t0);

    double t = 0.0;
    int step = 0;
    const double t_tiny = params.t_end * 1e-12;
    while (t < params.t_end - t_tiny) {
        ++step;
        double dt = (step == 1) ? std::min(params.dt0, params.dt_max)
                                : adaptive_dt(vel.max_abs(), h_cell, params.cfl, params.dt_max);
        dt = std::min(dt, params.t_end - t);
        int order = std::min(params.bdf_order, step);

        try {
            std::vector<Field> hist(history.begin(), history.end());
            Field t_new = advance_temperature(hist, vel, sc, dt, order, sc.source);
            p = solve_pressure(t_new, ra, sc, params);
            vel = compute_velocity(p, t_new, ra, sc);

            history.push_front(std::move(t_new));
            while (static_cast<int>(history.size()) > params.bdf_order) history.pop_back();
        } catch (const Error& e) {
            fail(e.code(), "step " + std::to_string(step) + ": " + e.what());
        }

        t += dt;
        record(t, history.front(), p, vel);
    }
    return traj;
}

} // namespace rpom::fom
