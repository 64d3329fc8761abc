#ifndef ROMBAYES_DISCRETIZATION_HPP
#define ROMBAYES_DISCRETIZATION_HPP

#include "rombayes/common.hpp"

namespace rombayes {

/// Uniform cell-centred grid on [x_min, x_max].
class Grid1D {
public:
    Grid1D() = default;
    Grid1D(Index n_cells, double x_min, double x_max) : n_cells_(n_cells), x_min_(x_min), x_max_(x_max)
    {
        require(n_cells > 0, "Grid1D: n_cells must be positive");
        require(std::isfinite(x_min) && std::isfinite(x_max) && x_max > x_min, "Grid1D: require x_max > x_min");
    }

    Index n_cells() const noexcept { return n_cells_; }
    double x_min() const noexcept { return x_min_; }
    double x_max() const noexcept { return x_max_; }
    double dx() const noexcept { return (x_max_ - x_min_) / static_cast<double>(n_cells_); }
    double center(Index i) const noexcept { return x_min_ + (static_cast<double>(i) + 0.5) * dx(); }

    Vector centers() const
    {
        Vector x(n_cells_);
        for (Index i = 0; i < n_cells_; ++i) x[i] = center(i);
        return x;
    }

    /// Cell measures used as L2 inner-product weights.
    Vector weights() const { return Vector::Constant(n_cells_, dx()); }

private:
    Index n_cells_ = 1;
    double x_min_ = 0.0;
    double x_max_ = 1.0;
};

enum class BoundaryKind { dirichlet, periodic };

/// Boundary data. Dirichlet values are injected as ghost-cell values.
struct Boundary {
    BoundaryKind kind = BoundaryKind::dirichlet;
    double left = 0.0;
    double right = 0.0;

    static Boundary dirichlet(double l, double r) { return {BoundaryKind::dirichlet, l, r}; }
    static Boundary periodic() { return {BoundaryKind::periodic, 0.0, 0.0}; }

    /// Same kind with zero data; this is what Galerkin operators act with.
    Boundary homogeneous() const { return {kind, 0.0, 0.0}; }
};

/// Weighted full-order snapshots, one column per time.
struct SnapshotMatrix {
    Matrix values;   // n_cells x n_times
    Vector times;    // n_times, strictly increasing
    Vector weights;  // n_cells, positive

    Index n_cells() const noexcept { return values.rows(); }
    Index n_times() const noexcept { return values.cols(); }

    void validate() const
    {
        require_dims(values.cols() == times.size(), "SnapshotMatrix: column count must equal number of times");
        require_dims(values.rows() == weights.size(), "SnapshotMatrix: row count must equal number of weights");
        require(strictly_increasing(times), "SnapshotMatrix: times must be strictly increasing");
        require((weights.array() > 0.0).all(), "SnapshotMatrix: weights must be positive");
        require(values.allFinite() && times.allFinite() && weights.allFinite(),
                "SnapshotMatrix: non-finite entries");
    }
};

// ---------------------------------------------------------------------------
// Spatial operators of the Burgers discretization. The diffusion operator is
// the central second difference. The convection operator used for Galerkin
// projection is the central (bilinear) flux of u^2/2; the full-order model
// adds upwinding on top of it through the Godunov flux.
// ---------------------------------------------------------------------------

namespace ops {

inline double neighbor(const Vector& u, Index i, Index n, const Boundary& bc)
{
    if (i < 0) return bc.kind == BoundaryKind::periodic ? u[n - 1] : bc.left;
    if (i >= n) return bc.kind == BoundaryKind::periodic ? u[0] : bc.right;
    return u[i];
}

/// (u_{i+1} - 2 u_i + u_{i-1}) / dx^2 with ghost values from bc.
inline Vector diffusion(const Grid1D& grid, const Vector& u, const Boundary& bc)
{
    const Index n = grid.n_cells();
    const double inv_dx2 = 1.0 / (grid.dx() * grid.dx());
    Vector out(n);
    for (Index i = 0; i < n; ++i)
        out[i] = (neighbor(u, i + 1, n, bc) - 2.0 * u[i] + neighbor(u, i - 1, n, bc)) * inv_dx2;
    return out;
}

/// Symmetric bilinear central convection form K(v, w) approximating (v w / 2)_x:
/// K(v, w)_i = (v_{i+1} w_{i+1} - v_{i-1} w_{i-1}) / (4 dx). Ghost values of
/// v and w come from the homogeneous boundary.
inline Vector convection(const Grid1D& grid, const Vector& v, const Vector& w, const Boundary& bc)
{
    const Index n = grid.n_cells();
    const Boundary hom = bc.homogeneous();
    const double inv = 1.0 / (4.0 * grid.dx());
    Vector out(n);
    for (Index i = 0; i < n; ++i) {
        double right = neighbor(v, i + 1, n, hom) * neighbor(w, i + 1, n, hom);
        double left = neighbor(v, i - 1, n, hom) * neighbor(w, i - 1, n, hom);
        out[i] = (right - left) * inv;
    }
    return out;
}

/// Upwind bilinear form for left-to-right transport:
/// K(v, w)_i = (v_i w_i - v_{i-1} w_{i-1}) / (2 dx). For u >= 0 everywhere,
/// K(u, u) equals the Godunov flux difference of the full-order model exactly.
inline Vector upwind_convection(const Grid1D& grid, const Vector& v, const Vector& w, const Boundary& bc)
{
    const Index n = grid.n_cells();
    const Boundary hom = bc.homogeneous();
    const double inv = 1.0 / (2.0 * grid.dx());
    Vector out(n);
    for (Index i = 0; i < n; ++i) out[i] = (v[i] * w[i] - neighbor(v, i - 1, n, hom) * neighbor(w, i - 1, n, hom)) * inv;
    return out;
}

/// Godunov flux for f(u) = u^2/2 and its derivatives w.r.t. the left and
/// right states.
struct FluxValue {
    double flux;
    double d_left;
    double d_right;
};

inline FluxValue godunov_flux(double ul, double ur)
{
    if (ul <= ur) {
        if (ul > 0.0) return {0.5 * ul * ul, ul, 0.0};
        if (ur < 0.0) return {0.5 * ur * ur, 0.0, ur};
        return {0.0, 0.0, 0.0};
    }
    double fl = 0.5 * ul * ul;
    double fr = 0.5 * ur * ur;
    if (fl >= fr) return {fl, ul, 0.0};
    return {fr, 0.0, ur};
}

} // namespace ops

} // namespace rombayes

#endif
