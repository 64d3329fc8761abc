#ifndef ROMBAYES_PCE_HPP
#define ROMBAYES_PCE_HPP

#include "rombayes/enkf.hpp"

#include <memory>
#include <span>
#include <sstream>
#include <utility>

namespace rombayes {

/// Complete total-degree multi-index set in graded order. Within one total
/// degree the first component runs from high to low, so for m = 2, p = 2 the
/// order is (0,0) (1,0) (0,1) (2,0) (1,1) (0,2).
class MultiIndexSet {
public:
    struct Term {
        int variable;
        int degree;
    };

    MultiIndexSet() = default;
    MultiIndexSet(int m, int p) : m_(m), p_(p) {}

    int n_vars() const noexcept { return m_; }
    int degree() const noexcept { return p_; }
    Index size() const noexcept { return static_cast<Index>(offsets_.size()) - 1; }

    /// Non-zero entries of multi-index a, by increasing variable.
    std::span<const Term> terms(Index a) const
    {
        const auto i = static_cast<std::size_t>(a);
        return {data_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
    }

    int total_degree(Index a) const
    {
        int d = 0;
        for (const Term& t : terms(a)) d += t.degree;
        return d;
    }

    std::vector<int> dense(Index a) const
    {
        std::vector<int> out(static_cast<std::size_t>(m_), 0);
        for (const Term& t : terms(a)) out[static_cast<std::size_t>(t.variable)] = t.degree;
        return out;
    }

    void reserve(std::size_t indices, std::size_t terms)
    {
        offsets_.reserve(indices + 1);
        data_.reserve(terms);
    }

    void push_back(std::span<const Term> t)
    {
        data_.insert(data_.end(), t.begin(), t.end());
        offsets_.push_back(data_.size());
    }

private:
    int m_ = 0;
    int p_ = 0;
    std::vector<Term> data_;
    std::vector<std::size_t> offsets_{0};
};

/// C(m + p, p) evaluated in floating point.
inline double total_degree_cardinality(int m, int p)
{
    double c = 1.0;
    for (int k = 1; k <= p; ++k) c = c * static_cast<double>(m + k) / static_cast<double>(k);
    return std::round(c);
}

inline constexpr double max_multiindex_count = 1e7;

inline MultiIndexSet build_multiindex(int m, int p)
{
    require(m >= 1, "build_multiindex: need at least one variable");
    require(p >= 0, "build_multiindex: degree must be non-negative");
    double count = total_degree_cardinality(m, p);
    if (!(count <= max_multiindex_count)) {
        std::ostringstream msg;
        msg << "build_multiindex: C(" << m + p << ", " << p << ") = " << count << " exceeds the limit of "
            << max_multiindex_count << " indices";
        throw Error(msg.str());
    }
    MultiIndexSet set(m, p);
    set.reserve(static_cast<std::size_t>(count), 2 * static_cast<std::size_t>(count));
    // Successor within one total degree: take the last term not on the final
    // variable, move one unit from it to the next variable, and gather the
    // mass of the final variable there too.
    std::vector<MultiIndexSet::Term> current;
    current.reserve(static_cast<std::size_t>(p) + 1);
    for (int d = 0; d <= p; ++d) {
        current.clear();
        if (d > 0) current.push_back({0, d});
        while (true) {
            set.push_back(current);
            if (current.empty()) break;
            int tail = 0;
            if (current.back().variable == m - 1) {
                tail = current.back().degree;
                current.pop_back();
            }
            if (current.empty()) break;
            const int v = current.back().variable;
            if (--current.back().degree == 0) current.pop_back();
            current.push_back({v + 1, tail + 1});
        }
    }
    return set;
}

/// Delta_aa = E[Psi_a^2] = prod_k a_k!.
inline Vector basis_norms(const MultiIndexSet& set)
{
    Vector norms(set.size());
    for (Index a = 0; a < set.size(); ++a) {
        double v = 1.0;
        for (const auto& t : set.terms(a)) v *= std::tgamma(static_cast<double>(t.degree) + 1.0);
        norms[a] = v;
    }
    return norms;
}

/// Probabilists' Hermite polynomials He_0..He_p at x.
inline void hermite_values(double x, int p, double* out)
{
    out[0] = 1.0;
    if (p >= 1) out[1] = x;
    for (int k = 1; k < p; ++k) out[k + 1] = x * out[k] - static_cast<double>(k) * out[k - 1];
}

/// N x P matrix Psi(i, a) = prod_k He_{a_k}(xi(i, k)).
inline Matrix evaluate_basis(const MultiIndexSet& set, const Matrix& xi)
{
    require_dims(xi.cols() == set.n_vars(), "evaluate_basis: sample width must equal number of germ variables");
    require(xi.allFinite(), "evaluate_basis: samples must be finite");
    const int p = set.degree();
    const Index n = xi.rows();
    Matrix design(n, set.size());
    std::vector<double> table(static_cast<std::size_t>(set.n_vars() * (p + 1)));
    for (Index i = 0; i < n; ++i) {
        for (int k = 0; k < set.n_vars(); ++k) hermite_values(xi(i, k), p, &table[static_cast<std::size_t>(k * (p + 1))]);
        for (Index a = 0; a < set.size(); ++a) {
            double v = 1.0;
            for (const auto& t : set.terms(a)) v *= table[static_cast<std::size_t>(t.variable * (p + 1) + t.degree)];
            design(i, a) = v;
        }
    }
    return design;
}

/// Random variable(s) sum_a c_a Psi_a(xi); one coefficient row per output.
struct PceExpansion {
    std::shared_ptr<const MultiIndexSet> index_set;
    Matrix coefficients;  // d x P

    Index outputs() const noexcept { return coefficients.rows(); }
    Index terms() const noexcept { return coefficients.cols(); }
    Vector mean() const { return coefficients.col(0); }

    /// d x N values at germ samples (N x m).
    Matrix evaluate(const Matrix& xi) const { return coefficients * evaluate_basis(*index_set, xi).transpose(); }
};

struct PceMoments {
    Vector mean;
    Matrix covariance;
};

/// mean = c_0, covariance = sum_{a>0} Delta_aa c_a c_a^T.
inline PceMoments pce_moments(const PceExpansion& expansion, const Vector& norms)
{
    require_dims(norms.size() == expansion.terms(), "pce_moments: norm diagonal has wrong length");
    const Index p = expansion.terms();
    PceMoments m;
    m.mean = expansion.coefficients.col(0);
    Matrix fluct = expansion.coefficients.rightCols(p - 1);
    m.covariance = fluct * norms.tail(p - 1).asDiagonal() * fluct.transpose();
    m.covariance = 0.5 * (m.covariance + m.covariance.transpose()).eval();
    return m;
}

/// Degree-1 representation q = mean + diag(std) xi over a fresh germ.
inline PceExpansion linear_gaussian_pce(const Vector& mean, const Vector& std, int degree)
{
    require_dims(mean.size() == std.size(), "linear_gaussian_pce: length mismatch");
    const int m = static_cast<int>(mean.size());
    auto set = std::make_shared<const MultiIndexSet>(build_multiindex(m, degree));
    PceExpansion e{set, Matrix::Zero(mean.size(), set->size())};
    e.coefficients.col(0) = mean;
    if (degree >= 1)
        for (int k = 0; k < m; ++k) e.coefficients(k, 1 + k) = std[k];  // e_k sits at position 1 + k
    return e;
}

struct GmkOptions {
    double pinv_cutoff = 1e-10;
    /// Relative (to trace) tolerance for negative eigenvalues.
    double clip_tolerance = 1e-12;
};

struct GmkResult {
    PceExpansion posterior;
    Matrix gain;
    Index gain_rank = 0;
    Matrix posterior_covariance;  // C_f - K C_y K^T
};

/// Square-root PCE form of the linear Gauss-Markov-Kalman update.
///
/// The fluctuation coefficients are scaled to square-root factors S = q~ D^{1/2}
/// (so S S^T is the covariance). With Y = y~ D^{1/2} and G = (Y Y^T + C_eps)^+
/// the posterior covariance is S_f (I - Y^T G Y) S_f^T, so the posterior
/// factor is S_a = S_f W^T with W the symmetric square root of I - Y^T G Y.
/// This keeps the posterior in the prior's expansion space and reproduces
/// C_f - K C_y K^T exactly. The noise germ enters only through C_eps.
inline GmkResult gmk_pce_update(const PceExpansion& prior, const PceExpansion& forecast, const Vector& y,
                                const Vector& noise_variance, const Vector& norms, const GmkOptions& options = {})
{
    const Index p = prior.terms();
    require_dims(forecast.terms() == p && norms.size() == p, "gmk_pce_update: expansions must share the index set");
    require_dims(y.size() == forecast.outputs() && noise_variance.size() == y.size(),
                 "gmk_pce_update: observation length mismatch");
    require((noise_variance.array() >= 0.0).all(), "gmk_pce_update: negative noise variance");

    const Vector root = norms.tail(p - 1).cwiseSqrt();
    const Matrix sf = prior.coefficients.rightCols(p - 1) * root.asDiagonal();
    const Matrix yf = forecast.coefficients.rightCols(p - 1) * root.asDiagonal();
    const Matrix c_f = sf * sf.transpose();
    const Matrix c_qy = sf * yf.transpose();
    Matrix c_y = yf * yf.transpose();
    c_y.diagonal() += noise_variance;
    c_y = 0.5 * (c_y + c_y.transpose());
    if (c_y.size() > 0) {
        double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(c_y, Eigen::EigenvaluesOnly).eigenvalues()[0];
        if (min_eig < -1e-10 * std::max(c_y.trace(), 1e-300))
            throw ConditioningError("gmk_pce_update: forecast covariance is not positive semidefinite");
    }

    PseudoInverse g = symmetric_pinv(c_y, options.pinv_cutoff);
    GmkResult out;
    out.gain = c_qy * g.matrix;
    out.gain_rank = g.rank;
    out.posterior_covariance = c_f - out.gain * c_y * out.gain.transpose();
    out.posterior_covariance = 0.5 * (out.posterior_covariance + out.posterior_covariance.transpose());

    out.posterior.index_set = prior.index_set;
    out.posterior.coefficients = prior.coefficients;
    if (out.gain.isZero(0.0)) return out;

    out.posterior.coefficients.col(0) = prior.mean() + out.gain * (y - forecast.mean());

    // Thin SVD of Y restricts the transform to Y's row space.
    Eigen::BDCSVD<Matrix> svd(yf, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    Index r = 0;
    while (r < sv.size() && sv[r] > 1e-14 * sv[0]) ++r;
    Matrix sa = sf;
    if (r > 0) {
        Matrix us = svd.matrixU().leftCols(r) * sv.head(r).asDiagonal();
        Matrix b = us.transpose() * g.matrix * us;
        Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (b + b.transpose()));
        Vector shrink(r);
        const double tol = options.clip_tolerance * std::max(1.0, b.trace());
        for (Index k = 0; k < r; ++k) {
            double keep = 1.0 - eig.eigenvalues()[k];
            if (keep < -tol) throw ConditioningError("gmk_pce_update: update increases variance");
            shrink[k] = 1.0 - std::sqrt(std::max(keep, 0.0));
        }
        Matrix vq = svd.matrixV().leftCols(r) * eig.eigenvectors();
        sa -= (sf * vq) * shrink.asDiagonal() * vq.transpose();
    }
    out.posterior.coefficients.rightCols(p - 1) = sa * root.cwiseInverse().asDiagonal();
    return out;
}

/// Per-observation noise variances for data flattened time-major.
inline Vector observation_variances(const NoiseModel& noise, Index n_obs)
{
    const Index n = noise.n_modes();
    Vector v(n_obs * n);
    for (Index e = 0; e < v.size(); ++e) v[e] = noise.std_per_mode[e % n] * noise.std_per_mode[e % n];
    return v;
}

} // namespace rombayes

#endif
