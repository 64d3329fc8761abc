#ifndef ROMBAYES_ROM_HPP
#define ROMBAYES_ROM_HPP

#include "rombayes/pod.hpp"

#include <limits>
#include <sstream>

namespace rombayes {

/// Dense n x n x n tensor stored with k fastest.
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(Index n) : n_(n), data_(Vector::Zero(n * n * n)) {}

    Index dim() const noexcept { return n_; }
    double& operator()(Index i, Index j, Index k) { return data_[(i * n_ + j) * n_ + k]; }
    double operator()(Index i, Index j, Index k) const { return data_[(i * n_ + j) * n_ + k]; }
    const Vector& flat() const noexcept { return data_; }
    Vector& flat() noexcept { return data_; }

    /// out_i = sum_jk T_ijk a_j a_k
    Vector contract(const Vector& a) const
    {
        Vector out = Vector::Zero(n_);
        for (Index i = 0; i < n_; ++i) {
            double acc = 0.0;
            for (Index j = 0; j < n_; ++j) {
                double row = 0.0;
                for (Index k = 0; k < n_; ++k) row += (*this)(i, j, k) * a[k];
                acc += a[j] * row;
            }
            out[i] = acc;
        }
        return out;
    }

    /// d/da of contract(a): J_il = sum_k (T_ilk + T_ikl) a_k
    Matrix contract_jacobian(const Vector& a) const
    {
        Matrix jac = Matrix::Zero(n_, n_);
        for (Index i = 0; i < n_; ++i)
            for (Index l = 0; l < n_; ++l) {
                double acc = 0.0;
                for (Index k = 0; k < n_; ++k) acc += ((*this)(i, l, k) + (*this)(i, k, l)) * a[k];
                jac(i, l) = acc;
            }
        return jac;
    }

private:
    Index n_ = 0;
    Vector data_;
};

/// Galerkin ROM  M a' = nu A a - a^T C a.
struct ReducedSystem {
    Matrix gram;        // M_r
    Matrix diffusion;   // A_r
    Tensor3 convection; // C_r
    double nu = 0.0;

    Index n_modes() const noexcept { return gram.rows(); }

    void validate() const
    {
        const Index n = gram.rows();
        require_dims(gram.cols() == n && diffusion.rows() == n && diffusion.cols() == n && convection.dim() == n,
                     "ReducedSystem: inconsistent operator dimensions");
        require(gram.allFinite() && diffusion.allFinite() && convection.flat().allFinite() && std::isfinite(nu),
                "ReducedSystem: non-finite entries");
    }

    static ReducedSystem zeros(Index n, double nu = 0.0)
    {
        return {Matrix::Identity(n, n), Matrix::Zero(n, n), Tensor3(n), nu};
    }
};

/// Additive correction (A~, C~) packed as A~ row-major followed by C~ in
/// (i, j, k) lexicographic order.
struct CorrectionVector {
    Index n_modes = 0;
    Vector values;

    static CorrectionVector zeros(Index n) { return {n, Vector::Zero(correction_size(n))}; }

    static CorrectionVector pack(const Matrix& diffusion, const Tensor3& convection)
    {
        const Index n = diffusion.rows();
        require_dims(diffusion.cols() == n && convection.dim() == n, "CorrectionVector::pack: dimension mismatch");
        CorrectionVector c{n, Vector(correction_size(n))};
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) c.values[i * n + j] = diffusion(i, j);
        c.values.tail(n * n * n) = convection.flat();
        return c;
    }

    Matrix diffusion() const
    {
        Matrix d(n_modes, n_modes);
        for (Index i = 0; i < n_modes; ++i)
            for (Index j = 0; j < n_modes; ++j) d(i, j) = values[i * n_modes + j];
        return d;
    }

    Tensor3 convection() const
    {
        Tensor3 t(n_modes);
        t.flat() = values.tail(n_modes * n_modes * n_modes);
        return t;
    }

    void validate() const
    {
        require_dims(values.size() == correction_size(n_modes), "CorrectionVector: length must be n^2 (1 + n)");
        require(values.allFinite(), "CorrectionVector: non-finite entries");
    }
};

struct RomTrajectory {
    Vector times;
    Matrix states;  // n_times x n_modes
};

// ---------------------------------------------------------------------------
// Galerkin assembly
// ---------------------------------------------------------------------------

/// Bilinear form used for C_r. The full-order flux is Godunov, which is not
/// bilinear; upwind reproduces it exactly while the velocity stays
/// non-negative, central is its sign-neutral counterpart.
enum class ConvectionScheme { central, upwind };

/// A_ij = <phi_i, D phi_j>_W and C_ijk = <phi_i, K(phi_j, phi_k)>_W with the
/// homogeneous boundary operators of the full-order discretization.
inline ReducedSystem assemble_reduced_operators(const PodBasis& basis, const Grid1D& grid, double nu,
                                                const Boundary& boundary = Boundary::dirichlet(0.0, 0.0),
                                                ConvectionScheme scheme = ConvectionScheme::central)
{
    if (basis.n_cells() != grid.n_cells())
        throw IncompatibleDiscretizationError("assemble_reduced_operators: basis and grid cell counts differ");
    if (basis.weights.size() != grid.n_cells() ||
        !basis.weights.isApprox(grid.weights(), 1e-12))
        throw IncompatibleDiscretizationError("assemble_reduced_operators: basis weights do not match grid");

    const Index n = basis.n_modes();
    const Boundary hom = boundary.homogeneous();
    const Matrix& phi = basis.modes;
    const Vector& w = basis.weights;

    ReducedSystem sys;
    sys.nu = nu;
    sys.gram = basis.gram();
    sys.diffusion.resize(n, n);
    sys.convection = Tensor3(n);

    Matrix weighted = w.asDiagonal() * phi;
    for (Index j = 0; j < n; ++j) {
        Vector dphi = ops::diffusion(grid, phi.col(j), hom);
        sys.diffusion.col(j) = weighted.transpose() * dphi;
    }
    for (Index j = 0; j < n; ++j)
        for (Index k = 0; k < n; ++k) {
            Vector kjk = scheme == ConvectionScheme::upwind ? ops::upwind_convection(grid, phi.col(j), phi.col(k), hom)
                                                            : ops::convection(grid, phi.col(j), phi.col(k), hom);
            Vector proj = weighted.transpose() * kjk;
            for (Index i = 0; i < n; ++i) sys.convection(i, j, k) = proj[i];
        }
    return sys;
}

// ---------------------------------------------------------------------------
// Time integration
// ---------------------------------------------------------------------------

struct IntegratorOptions {
    double newton_tolerance = 1e-12;
    int max_newton_iterations = 25;
};

/// Coefficients of variable-step BDF2 written as
///   x_{n+1} - c_now x_n + c_prev x_{n-1} = beta h f(x_{n+1}).
struct Bdf2Coefficients {
    double c_now;
    double c_prev;
    double beta;
};

inline Bdf2Coefficients bdf2_coefficients(double h, double h_prev)
{
    if (h_prev <= 0.0) return {1.0, 0.0, 1.0};  // implicit Euler start
    double w = h / h_prev;
    double denom = 1.0 + 2.0 * w;
    return {(1.0 + w) * (1.0 + w) / denom, w * w / denom, (1.0 + w) / denom};
}

/// Integrates M a' = nu (A + A~) a - a^T (C + C~) a with BDF2 on the given time
/// grid (implicit Euler first step). Each implicit stage is solved by Newton
/// with the analytic Jacobian.
inline RomTrajectory integrate_rom(const ReducedSystem& system, const CorrectionVector& correction, const Vector& a0,
                                   const Vector& times, const IntegratorOptions& options = {})
{
    system.validate();
    const Index n = system.n_modes();
    require_dims(correction.n_modes == n, "integrate_rom: correction has wrong mode count");
    correction.validate();
    require_dims(a0.size() == n, "integrate_rom: a0 has wrong length");
    require(a0.allFinite(), "integrate_rom: a0 must be finite");
    require(times.size() >= 1 && strictly_increasing(times), "integrate_rom: times must be strictly increasing");

    const Matrix lin = system.nu * (system.diffusion + correction.diffusion());
    Tensor3 conv = system.convection;
    conv.flat() += correction.convection().flat();
    const Matrix& mass = system.gram;

    auto rhs = [&](const Vector& a) -> Vector { return lin * a - conv.contract(a); };

    RomTrajectory traj;
    traj.times = times;
    traj.states.resize(times.size(), n);
    traj.states.row(0) = a0.transpose();

    Vector prev = a0;
    Vector now = a0;
    double h_prev = 0.0;
    for (Index step = 1; step < times.size(); ++step) {
        const double h = times[step] - times[step - 1];
        const Bdf2Coefficients c = bdf2_coefficients(h, h_prev);
        const Vector history = c.c_now * now - c.c_prev * prev;
        const double gh = c.beta * h;

        Vector x = step >= 2 ? Vector(now + (h / h_prev) * (now - prev)) : now;
        bool converged = false;
        for (int it = 0; it < options.max_newton_iterations; ++it) {
            Vector residual = mass * (x - history) - gh * rhs(x);
            double scale = 1.0 + x.lpNorm<Eigen::Infinity>();
            if (!residual.allFinite()) break;
            if (residual.lpNorm<Eigen::Infinity>() <= options.newton_tolerance * scale) {
                converged = true;
                break;
            }
            Matrix jac = mass - gh * (lin - conv.contract_jacobian(x));
            Vector dx = jac.partialPivLu().solve(residual);
            x -= dx;
            if (!x.allFinite()) break;
            // Roundoff floor: the update no longer changes the iterate.
            if (dx.lpNorm<Eigen::Infinity>() <= 1e-15 * scale) {
                Vector r = mass * (x - history) - gh * rhs(x);
                converged = r.lpNorm<Eigen::Infinity>() <= 1e3 * options.newton_tolerance * scale;
                break;
            }
        }
        if (!x.allFinite()) {
            std::ostringstream msg;
            msg << "integrate_rom: non-finite state at step " << step << " (t=" << times[step] << ")";
            throw DivergenceError(msg.str(), static_cast<std::size_t>(step));
        }
        if (!converged) {
            std::ostringstream msg;
            msg << "integrate_rom: Newton failed to converge at step " << step << " (t=" << times[step] << ")";
            throw StepFailureError(msg.str(), static_cast<std::size_t>(step));
        }
        traj.states.row(step) = x.transpose();
        prev = now;
        now = x;
        h_prev = h;
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Error series
// ---------------------------------------------------------------------------

struct ErrorSeries {
    Vector times;
    Vector values;                   // NaN where undefined
    std::vector<Index> undefined;    // indices with zero reference norm
};

/// eps(t) = ||u_ref - u||_W / ||u_ref||_W per time.
inline ErrorSeries relative_l2_error(const SnapshotMatrix& reference, const SnapshotMatrix& candidate)
{
    require_dims(reference.n_cells() == candidate.n_cells() && reference.n_times() == candidate.n_times(),
                 "relative_l2_error: shape mismatch");
    if (reference.weights != candidate.weights)
        throw IncompatibleDiscretizationError("relative_l2_error: weights differ");
    require((reference.times - candidate.times).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + reference.times.cwiseAbs().maxCoeff()),
            "relative_l2_error: time stamps differ");
    ErrorSeries out;
    out.times = reference.times;
    out.values.resize(reference.n_times());
    const Vector& w = reference.weights;
    for (Index t = 0; t < reference.n_times(); ++t) {
        double ref = std::sqrt((reference.values.col(t).array().square() * w.array()).sum());
        double diff = std::sqrt(((reference.values.col(t) - candidate.values.col(t)).array().square() * w.array()).sum());
        if (ref == 0.0) {
            out.values[t] = std::numeric_limits<double>::quiet_NaN();
            out.undefined.push_back(t);
        } else {
            out.values[t] = diff / ref;
        }
    }
    return out;
}

/// Wraps a coefficient trajectory (n_times x n) as snapshots with unit
/// weights, so modal errors use the same error routine.
inline SnapshotMatrix as_snapshots(const Matrix& states, const Vector& times)
{
    return {states.transpose(), times, Vector::Ones(states.cols())};
}

} // namespace rombayes

#endif
