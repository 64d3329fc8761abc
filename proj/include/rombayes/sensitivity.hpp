#ifndef ROMBAYES_SENSITIVITY_HPP
#define ROMBAYES_SENSITIVITY_HPP

#include "rombayes/rvm.hpp"

namespace rombayes {

struct SensitivityReport {
    Vector ratio;                         // J_k = var(q_a,k) / var(q_f,k)
    std::optional<Vector> sobol_first;
    std::vector<Index> active_set;
    double threshold = 0.95;
    Warnings warnings;
};

/// J_k = posterior_var_k / prior_std_k^2; masked-out entries report 1.
inline Vector variance_ratio(const GaussianPrior& prior, const Vector& posterior_var)
{
    require_dims(posterior_var.size() == prior.size(), "variance_ratio: length mismatch");
    Vector j(prior.size());
    for (Index k = 0; k < prior.size(); ++k) {
        if (!prior.active_mask[static_cast<std::size_t>(k)]) {
            j[k] = 1.0;
            continue;
        }
        require(prior.std[k] > 0.0, "variance_ratio: prior std must be positive on active entries");
        j[k] = posterior_var[k] / (prior.std[k] * prior.std[k]);
    }
    return j;
}

struct SobolResult {
    Vector first_order;   // one per germ variable
    bool zero_variance = false;
};

/// First-order indices from PCE coefficients: the variance carried by terms
/// that involve only variable i, over the total variance. Outputs are
/// combined by summing partial and total variances (variance weighting).
inline SobolResult sobol_first_order(const PceExpansion& expansion, const Vector& norms)
{
    const MultiIndexSet& set = *expansion.index_set;
    require_dims(norms.size() == set.size() && expansion.terms() == set.size(),
                 "sobol_first_order: inconsistent expansion");
    SobolResult out;
    out.first_order = Vector::Zero(set.n_vars());
    double total = 0.0;
    for (Index a = 1; a < set.size(); ++a) {
        double v = norms[a] * expansion.coefficients.col(a).squaredNorm();
        total += v;
        const auto& terms = set.terms(a);
        if (terms.size() == 1) out.first_order[terms.front().variable] += v;
    }
    if (total == 0.0) {
        out.first_order.setZero();
        out.zero_variance = true;
        return out;
    }
    out.first_order /= total;
    return out;
}

struct LinearMap {
    Matrix h;          // m_y x s
    Vector intercept;  // m_y (output means)
    std::vector<Index> nonzeros_per_output;
};

struct LinearMapOptions {
    RvmConfig rvm;
    std::size_t threads = 1;
};

/// Sparse estimate of y ~ intercept + H (q - mean q), one RVM per output row.
/// Inputs are standardised internally; constant columns are dropped.
inline LinearMap estimate_linear_map(const Matrix& q_samples, const Matrix& y_samples, const LinearMapOptions& options = {})
{
    require_dims(q_samples.rows() == y_samples.rows(), "estimate_linear_map: sample counts differ");
    require(q_samples.rows() >= 2, "estimate_linear_map: need at least two samples");
    const Index z = q_samples.rows();
    const Index s = q_samples.cols();

    Matrix qc = q_samples.rowwise() - q_samples.colwise().mean();
    Vector scale(s);
    std::vector<Index> varying;
    for (Index k = 0; k < s; ++k) {
        scale[k] = std::sqrt(qc.col(k).squaredNorm() / static_cast<double>(z - 1));
        if (scale[k] > 0.0) varying.push_back(k);
    }
    Matrix design(z, static_cast<Index>(varying.size()));
    for (std::size_t c = 0; c < varying.size(); ++c)
        design.col(static_cast<Index>(c)) = qc.col(varying[c]) / scale[varying[c]];
    std::optional<Matrix> gram;
    if (design.cols() <= design.rows()) gram = design.transpose() * design;

    LinearMap map;
    map.intercept = y_samples.colwise().mean().transpose();
    map.h = Matrix::Zero(y_samples.cols(), s);
    map.nonzeros_per_output.assign(static_cast<std::size_t>(y_samples.cols()), 0);
    parallel_for(static_cast<std::size_t>(y_samples.cols()), options.threads, [&](std::size_t o) {
        const auto out = static_cast<Index>(o);
        Vector target = y_samples.col(out).array() - map.intercept[out];
        if (design.cols() == 0) return;
        RvmResult r = detail::rvm_fit_impl(design, gram ? &*gram : nullptr, target, options.rvm);
        for (Index idx : r.active_set) {
            const Index k = varying[static_cast<std::size_t>(idx)];
            map.h(out, k) = r.weights[idx] / scale[k];
        }
        map.nonzeros_per_output[o] = static_cast<Index>(r.active_set.size());
    });
    return map;
}

/// K = C_q H^T (H C_q H^T + C_eps)^+ with the exact (diagonal) prior covariance.
inline KalmanGain improved_kalman_gain(const Matrix& h, const GaussianPrior& prior, const Matrix& c_eps,
                                       double pinv_cutoff = 1e-10)
{
    require_dims(h.cols() == prior.size(), "improved_kalman_gain: H width must equal parameter count");
    require_dims(c_eps.rows() == h.rows() && c_eps.cols() == h.rows(), "improved_kalman_gain: C_eps shape mismatch");
    const Vector var = prior.variance();
    Matrix c_qh = var.asDiagonal() * h.transpose();  // s x m
    Matrix c_y = h * c_qh + c_eps;
    return kalman_gain(c_qh, c_y, pinv_cutoff);
}

/// diag(C_q - K H C_q): posterior variances under a linear map and gain.
inline Vector linear_posterior_variance(const Matrix& gain, const Matrix& h, const GaussianPrior& prior)
{
    const Vector var = prior.variance();
    Vector post(prior.size());
    Matrix kh = gain * h;  // s x s
    for (Index k = 0; k < prior.size(); ++k) post[k] = var[k] - kh(k, k) * var[k];
    return post.cwiseMax(0.0);
}

struct ScreeningResult {
    std::vector<Index> active_set;
    Warnings warnings;
};

/// Keeps k with J_k < threshold. An empty result is reported, and callers then
/// keep every variable.
inline ScreeningResult screen_variables(const Vector& ratios, double threshold)
{
    require(threshold > 0.0 && threshold < 1.0, "screen_variables: threshold must be in (0, 1)");
    ScreeningResult out;
    for (Index k = 0; k < ratios.size(); ++k)
        if (ratios[k] < threshold) out.active_set.push_back(k);
    if (out.active_set.empty())
        out.warnings.push_back("screen_variables: no variable passed the threshold; keeping all variables");
    return out;
}

} // namespace rombayes

#endif
