#ifndef ROMBAYES_FOM_HPP
#define ROMBAYES_FOM_HPP

#include "rombayes/rom.hpp"

#include <Eigen/SparseLU>
#include <Eigen/SparseCore>

#include <cstdint>
#include <sstream>

namespace rombayes {

struct BurgersSetup {
    Grid1D grid;
    double nu = 0.0;
    Vector initial;
    Boundary boundary;
    double t_end = 1.0;
    double dt = 1e-3;
    Index save_every = 1;
};

namespace detail {

/// Spatial right-hand side nu u_xx - (u^2/2)_x of the full-order model and its
/// sparse Jacobian.
class BurgersOperator {
public:
    BurgersOperator(const Grid1D& grid, double nu, const Boundary& bc) : grid_(grid), nu_(nu), bc_(bc) {}

    Vector rhs(const Vector& u) const
    {
        const Index n = grid_.n_cells();
        Vector out = nu_ * ops::diffusion(grid_, u, bc_);
        const double inv_dx = 1.0 / grid_.dx();
        for (Index face = 0; face <= n; ++face) {
            double ul = ops::neighbor(u, face - 1, n, bc_);
            double ur = ops::neighbor(u, face, n, bc_);
            double f = ops::godunov_flux(ul, ur).flux * inv_dx;
            if (face - 1 >= 0) out[face - 1] -= f;
            if (face < n) out[face] += f;
        }
        return out;
    }

    Eigen::SparseMatrix<double> jacobian(const Vector& u) const
    {
        const Index n = grid_.n_cells();
        const bool periodic = bc_.kind == BoundaryKind::periodic;
        const double dx = grid_.dx();
        const double d = nu_ / (dx * dx);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(5 * n));
        auto wrap = [n](Index i) { return (i + n) % n; };
        for (Index i = 0; i < n; ++i) {
            trip.emplace_back(i, i, -2.0 * d);
            if (i + 1 < n || periodic) trip.emplace_back(i, wrap(i + 1), d);
            if (i - 1 >= 0 || periodic) trip.emplace_back(i, wrap(i - 1), d);
        }
        // Mirrors rhs(): the cell left of a face loses the flux, the cell right
        // of it gains it. Ghost states are constants.
        for (Index face = 0; face <= n; ++face) {
            ops::FluxValue fv = ops::godunov_flux(ops::neighbor(u, face - 1, n, bc_), ops::neighbor(u, face, n, bc_));
            Index lvar = face - 1 >= 0 ? face - 1 : (periodic ? n - 1 : -1);
            Index rvar = face < n ? face : (periodic ? 0 : -1);
            auto add_row = [&](Index row, double sign) {
                if (lvar >= 0) trip.emplace_back(row, lvar, sign * fv.d_left / dx);
                if (rvar >= 0) trip.emplace_back(row, rvar, sign * fv.d_right / dx);
            };
            if (face - 1 >= 0) add_row(face - 1, -1.0);
            if (face < n) add_row(face, 1.0);
        }
        Eigen::SparseMatrix<double> jac(n, n);
        jac.setFromTriplets(trip.begin(), trip.end());
        return jac;
    }

private:
    Grid1D grid_;
    double nu_;
    Boundary bc_;
};

} // namespace detail

/// Full-order snapshots of u_t + (u^2/2)_x = nu u_xx: central diffusion,
/// Godunov upwind flux, BDF2 in time (implicit Euler first step).
inline SnapshotMatrix simulate_burgers(const BurgersSetup& setup)
{
    const Grid1D& grid = setup.grid;
    const Index n = grid.n_cells();
    require(setup.dt > 0.0, "simulate_burgers: dt must be positive");
    require(setup.nu >= 0.0, "simulate_burgers: viscosity must be non-negative");
    require(setup.save_every >= 1, "simulate_burgers: save_every must be positive");
    require_dims(setup.initial.size() == n, "simulate_burgers: initial state has wrong length");
    require(setup.initial.allFinite(), "simulate_burgers: initial state must be finite");
    require(setup.t_end > 0.0, "simulate_burgers: t_end must be positive");
    const auto n_steps = static_cast<Index>(std::llround(setup.t_end / setup.dt));
    require(n_steps >= 1 && std::abs(static_cast<double>(n_steps) * setup.dt - setup.t_end) <= 1e-9 * setup.t_end,
            "simulate_burgers: t_end must be an integer multiple of dt");

    detail::BurgersOperator op(grid, setup.nu, setup.boundary);
    const Index n_saved = n_steps / setup.save_every + 1;
    SnapshotMatrix snaps;
    snaps.values.resize(n, n_saved);
    snaps.times.resize(n_saved);
    snaps.weights = grid.weights();
    snaps.values.col(0) = setup.initial;
    snaps.times[0] = 0.0;

    Eigen::SparseMatrix<double> identity(n, n);
    identity.setIdentity();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;

    Vector prev = setup.initial;
    Vector now = setup.initial;
    Index saved = 1;
    for (Index step = 1; step <= n_steps; ++step) {
        const Bdf2Coefficients c = bdf2_coefficients(setup.dt, step == 1 ? 0.0 : setup.dt);
        const Vector history = c.c_now * now - c.c_prev * prev;
        const double gh = c.beta * setup.dt;
        Vector x = now;
        bool converged = false;
        for (int it = 0; it < 50; ++it) {
            Vector r = x - history - gh * op.rhs(x);
            double scale = 1.0 + x.lpNorm<Eigen::Infinity>();
            if (!r.allFinite()) break;
            if (r.lpNorm<Eigen::Infinity>() <= 1e-12 * scale) {
                converged = true;
                break;
            }
            Eigen::SparseMatrix<double> jac = identity - gh * op.jacobian(x);
            lu.compute(jac);
            if (lu.info() != Eigen::Success) break;
            Vector dx = lu.solve(r);
            x -= dx;
            if (!x.allFinite()) break;
            if (dx.lpNorm<Eigen::Infinity>() <= 1e-15 * scale) {
                converged = true;
                break;
            }
        }
        const double t = static_cast<double>(step) * setup.dt;
        if (!x.allFinite() || !converged) {
            std::ostringstream msg;
            msg << "simulate_burgers: " << (x.allFinite() ? "Newton failed" : "non-finite state") << " at step "
                << step << " (t=" << t << ")";
            throw DivergenceError(msg.str(), static_cast<std::size_t>(step));
        }
        prev = now;
        now = x;
        if (step % setup.save_every == 0) {
            snaps.values.col(saved) = now;
            snaps.times[saved] = t;
            ++saved;
        }
    }
    return snaps;
}

// ---------------------------------------------------------------------------
// Synthetic quadratic truth
// ---------------------------------------------------------------------------

/// A reduced quadratic system whose data is generated with a known correction.
struct QuadraticTruth {
    ReducedSystem system;
    CorrectionVector true_correction;

    Index dim() const noexcept { return system.n_modes(); }

    void validate() const
    {
        system.validate();
        require_dims(true_correction.n_modes == system.n_modes(), "QuadraticTruth: correction dimension mismatch");
        true_correction.validate();
    }
};

/// Trajectory of the corrected ODE with the true correction, integrated by the
/// same routine the ROM uses.
inline Matrix simulate_quadratic_truth(const QuadraticTruth& truth, const Vector& a0, const Vector& times,
                                       const IntegratorOptions& options = {})
{
    truth.validate();
    return integrate_rom(truth.system, truth.true_correction, a0, times, options).states;
}

} // namespace rombayes

#endif
