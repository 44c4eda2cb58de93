#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "rpom/grid.hpp"

namespace rpom::fom {

enum class Side : int { left = 0, right = 1, bottom = 2, top = 3 };

/// Temperature boundary condition for one side: either insulated (zero
/// diffusive flux) or Dirichlet, optionally overridden by a Dirichlet segment
/// along the side (coordinate measured along the side axis).
struct TemperatureBc {
    bool dirichlet = false;
    double value = 0.0;
    bool has_segment = false;
    double seg_lo = 0.0;
    double seg_hi = 0.0;
    double seg_value = 0.0;

    static TemperatureBc insulated() { return {}; }
    static TemperatureBc fixed(double v) { return {true, v, false, 0.0, 0.0, 0.0}; }
};

struct Scenario {
    std::string name;
    Grid grid;
    std::array<TemperatureBc, 4> temperature_bc{};
    std::array<double, 4> normal_flux{};  // outward u.n per side, 0 = no-flow wall
    bool has_subdomain = false;
    double sub_x0 = 0.0, sub_x1 = 0.0, sub_y0 = 0.0, sub_y1 = 0.0;
    double source = 0.0;     // f_c, constant in space and time
    double initial_temperature = 0.0;

    TemperatureBc& bc(Side s) { return temperature_bc[static_cast<int>(s)]; }
    const TemperatureBc& bc(Side s) const { return temperature_bc[static_cast<int>(s)]; }

    void validate() const;

    /// Unit square heated on the left wall (T=1), cooled on the right (T=0),
    /// insulated top/bottom, no-flow everywhere.
    static Scenario heated_side(int nx, int ny);
    /// 2:1 box heated on the central half of the bottom boundary (T=1),
    /// T=0 on top, insulated sides, no-flow everywhere.
    static Scenario elder(int nx, int ny);
    /// Elder geometry plus a centered interior rectangle (1/4 of each extent)
    /// carrying a second buoyancy coefficient.
    static Scenario modified_elder(int nx, int ny);
};

struct SolverParams {
    double cfl = 0.5;
    double dt0 = 1e-4;
    double dt_max = 1e-3;
    int bdf_order = 2;
    double t_end = 0.02;
    double poisson_tol = 1e-10;
    int poisson_max_iter = 200000;
    double ra1 = 40.0;   // buoyancy coefficient (outside the subdomain, if any)
    double ra2 = 40.0;   // inside-the-subdomain coefficient
    bool store_flow = false;

    void validate() const;
};

struct FieldState {
    double t = 0.0;
    Field temperature;
    Field pressure;
    FaceVelocity velocity;
};

/// One full-order run: parameter vector, strictly increasing timestamps and
/// the per-step temperature fields (pressure/velocity kept when requested).
struct Trajectory {
    std::vector<double> mu;
    Grid grid;
    std::vector<double> timestamps;
    std::vector<Field> temperature;
    std::vector<Field> pressure;       // empty unless flow storage was on
    std::vector<FaceVelocity> velocity;

    std::size_t steps() const { return timestamps.size(); }
    bool has_flow() const { return !pressure.empty(); }
};

/// Ra = g * alpha * kappa * dT * H / K. All arguments must be positive.
double rayleigh_number(double g, double alpha, double kappa, double dT, double H, double K);

/// dt = min(CFL * h / |u|_inf, dt_max); the dt_max clamp also covers |u| = 0.
double adaptive_dt(double u_max_norm, double h_cell, double cfl, double dt_max);

/// Backward differentiation formula coefficients at order m in {1..4}:
/// BDF_m(phi^n) = current * phi^n + sum_i history[i] * phi^{n-1-i}.
struct BdfCoefficients {
    int order;
    double current;
    std::array<double, 4> history;
};
BdfCoefficients bdf_coefficients(int m, double dt);

/// Cell-centered buoyancy coefficient: ra1 outside, ra2 inside the subdomain.
Field rayleigh_field(const Scenario& sc, double ra1, double ra2);

/// Solve the pure-Neumann Poisson problem A p = rhs (A = -Laplacian with
/// prescribed-flux faces dropped) by Jacobi-preconditioned CG; the gauge is
/// fixed by pinning mean(p) = 0. Exposed for manufactured-solution tests.
Field poisson_neumann(const Field& rhs, const Grid& grid, double tol, int max_iter);

/// Pressure from the divergence of the Darcy law: lap(p) = d(Ra T)/dy with
/// the scenario's wall fluxes, zero-mean gauge.
Field solve_pressure(const Field& temperature, const Field& ra, const Scenario& sc,
                     const SolverParams& params);

/// Face velocities u = -grad p + y_hat * Ra * T (MAC differences); boundary
/// faces carry the scenario's prescribed fluxes.
FaceVelocity compute_velocity(const Field& pressure, const Field& temperature, const Field& ra,
                              const Scenario& sc);

/// Max over cells of the discrete face divergence.
double max_divergence(const FaceVelocity& vel, const Grid& grid);

/// One implicit-diffusion / explicit-upwind-advection step of the heat
/// equation. history[0] is the most recent field, history[k] is T^{n-1-k};
/// at least `order` entries are required.
Field advance_temperature(std::span<const Field> history, const FaceVelocity& vel,
                          const Scenario& sc, double dt, int order, double source,
                          double tol = 1e-12, int max_iter = 200000);

Trajectory run_simulation(const Scenario& sc, const SolverParams& params,
                          std::span<const double> mu);

} // namespace rpom::fom
