#ifndef ROMBAYES_POD_HPP
#define ROMBAYES_POD_HPP

#include "rombayes/discretization.hpp"

#include <sstream>

namespace rombayes {

/// Orthonormal (in the weighted inner product) spatial modes.
struct PodBasis {
    Matrix modes;            // n_cells x n_modes
    Vector singular_values;  // n_modes, descending
    Vector weights;          // n_cells

    Index n_modes() const noexcept { return modes.cols(); }
    Index n_cells() const noexcept { return modes.rows(); }

    /// Phi^T W Phi.
    Matrix gram() const { return modes.transpose() * weights.asDiagonal() * modes; }
};

/// Modal amplitudes of full-order data, one row per time.
struct MeasurementSet {
    Matrix coefficients;  // n_times x n_modes
    Vector times;
    Vector noise_std;     // n_modes

    Index n_times() const noexcept { return coefficients.rows(); }
    Index n_modes() const noexcept { return coefficients.cols(); }
};

struct PodOptions {
    bool mean_center = false;
    /// Singular values below this fraction of the largest count as zero.
    double rank_tolerance = 1e-7;
};

namespace detail {

/// Largest-magnitude entry made positive; first index wins ties.
inline void fix_sign(Eigen::Ref<Vector> mode)
{
    Index arg = 0;
    double best = -1.0;
    for (Index i = 0; i < mode.size(); ++i) {
        if (std::abs(mode[i]) > best) {
            best = std::abs(mode[i]);
            arg = i;
        }
    }
    if (mode[arg] < 0.0) mode = -mode;
}

/// Modified Gram-Schmidt in the W inner product, applied twice.
inline void w_orthonormalize(Matrix& modes, const Vector& weights)
{
    for (int pass = 0; pass < 2; ++pass) {
        for (Index j = 0; j < modes.cols(); ++j) {
            for (Index i = 0; i < j; ++i) {
                double proj = (modes.col(i).array() * weights.array() * modes.col(j).array()).sum();
                modes.col(j) -= proj * modes.col(i);
            }
            double norm = std::sqrt((modes.col(j).array().square() * weights.array()).sum());
            modes.col(j) /= norm;
        }
    }
}

} // namespace detail

/// POD by the method of snapshots: eigen-decomposition of the n_times x
/// n_times Gram matrix U^T W U.
inline PodBasis compute_pod(const SnapshotMatrix& snapshots, Index n_modes, const PodOptions& options = {})
{
    snapshots.validate();
    const Index nc = snapshots.n_cells();
    const Index nt = snapshots.n_times();
    require(n_modes >= 1, "compute_pod: n_modes must be at least 1");
    require(n_modes <= std::min(nc, nt), "compute_pod: n_modes exceeds min(n_cells, n_times)");

    Matrix u = snapshots.values;
    if (options.mean_center) u.colwise() -= u.rowwise().mean();

    Matrix gram = u.transpose() * snapshots.weights.asDiagonal() * u;
    gram = 0.5 * (gram + gram.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    // Eigen sorts ascending; walk from the end.
    const Vector& lambda = eig.eigenvalues();
    double sigma_max = std::sqrt(std::max(lambda[nt - 1], 0.0));
    Index rank = 0;
    for (Index k = nt - 1; k >= 0; --k) {
        double sigma = std::sqrt(std::max(lambda[k], 0.0));
        if (sigma_max > 0.0 && sigma > options.rank_tolerance * sigma_max) ++rank;
    }
    if (n_modes > rank) {
        std::ostringstream msg;
        msg << "compute_pod: requested " << n_modes << " modes but snapshots have numerical rank " << rank;
        throw RankDeficiencyError(msg.str(), rank);
    }

    PodBasis basis;
    basis.weights = snapshots.weights;
    basis.modes.resize(nc, n_modes);
    basis.singular_values.resize(n_modes);
    for (Index i = 0; i < n_modes; ++i) {
        Index k = nt - 1 - i;
        double sigma = std::sqrt(lambda[k]);
        basis.singular_values[i] = sigma;
        basis.modes.col(i) = u * eig.eigenvectors().col(k) / sigma;
    }
    detail::w_orthonormalize(basis.modes, basis.weights);
    for (Index i = 0; i < n_modes; ++i) detail::fix_sign(basis.modes.col(i));
    return basis;
}

/// a_ij = <u(t_i), phi_j>_W.
inline MeasurementSet project_snapshots(const SnapshotMatrix& snapshots, const PodBasis& basis)
{
    require_dims(snapshots.n_cells() == basis.n_cells(), "project_snapshots: cell count mismatch");
    if (snapshots.weights.size() != basis.weights.size() || snapshots.weights != basis.weights)
        throw IncompatibleDiscretizationError("project_snapshots: snapshot weights differ from basis weights");
    MeasurementSet m;
    m.coefficients = snapshots.values.transpose() * basis.weights.asDiagonal() * basis.modes;
    m.times = snapshots.times;
    m.noise_std = Vector::Zero(basis.n_modes());
    return m;
}

/// values[:, i] = sum_j coefficients(i, j) phi_j.
inline SnapshotMatrix reconstruct(const Matrix& coefficients, const PodBasis& basis, const Vector& times)
{
    require_dims(coefficients.cols() == basis.n_modes(), "reconstruct: coefficient columns must equal n_modes");
    require_dims(coefficients.rows() == times.size(), "reconstruct: coefficient rows must equal number of times");
    SnapshotMatrix s;
    s.values = basis.modes * coefficients.transpose();
    s.times = times;
    s.weights = basis.weights;
    return s;
}

/// Weighted energy captured by the first k modes.
inline double energy_fraction(const PodBasis& basis, const SnapshotMatrix& snapshots, Index k)
{
    double total = (snapshots.values.array().square().colwise() * snapshots.weights.array()).sum();
    if (total == 0.0) return 1.0;
    return basis.singular_values.head(k).squaredNorm() / total;
}

} // namespace rombayes

#endif
