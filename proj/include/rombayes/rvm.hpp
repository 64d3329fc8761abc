#ifndef ROMBAYES_RVM_HPP
#define ROMBAYES_RVM_HPP

#include "rombayes/pce.hpp"

#include <limits>
#include <numbers>
#include <map>
#include <optional>

namespace rombayes {

enum class RvmMethod {
    /// One basis function added, re-estimated or deleted per step.
    sequential,
    /// All precisions re-estimated together each sweep.
    classic,
};

struct RvmConfig {
    RvmMethod method = RvmMethod::sequential;
    int max_iter = 500;
    double prune_threshold = 1e12;
    double tol = 1e-6;
    /// When set, sigma^2 is held fixed instead of re-estimated.
    std::optional<double> noise_variance;
    /// Lower bound on sigma^2 relative to the mean square of the targets.
    double relative_noise_floor = 1e-16;
    /// Full posterior covariance is returned only up to this many active terms.
    Index max_covariance_size = 3000;
    /// Sequential method: a column enters only when q^2 / s exceeds this ratio.
    /// Unset means 2 ln P, the universal threshold, so that pure-noise columns
    /// are rarely admitted; 1 gives plain evidence maximisation.
    std::optional<double> add_ratio;
};

struct RvmResult {
    Vector weights;                 // P, exactly zero when pruned
    Vector precisions;              // P, +inf when pruned
    std::vector<bool> pruned;
    double noise_variance = 0.0;
    std::vector<Index> active_set;
    Matrix posterior_covariance;    // |active| x |active| (empty if too large)
    Vector posterior_variance;      // |active|
    std::vector<double> evidence_trace;
    int iterations = 0;
    int fallback_steps = 0;         // re-estimation steps replaced by EM steps
    bool converged = false;
    bool all_pruned = false;
    Warnings warnings;
};

namespace detail {

struct RvmPosterior {
    Vector mu;           // over active set
    Vector sigma_diag;   // over active set
    Matrix sigma;        // optional full covariance
    double log_evidence = 0.0;
    double residual_sq = 0.0;
};

/// Posterior of the weights for fixed hyperparameters, and the log marginal
/// likelihood. Uses the P x P form when the active set is no larger than N and
/// the Woodbury (N x N) form otherwise.
inline RvmPosterior rvm_posterior(const Matrix& design, const Matrix* gram, const Vector& targets,
                                  const std::vector<Index>& active, const Vector& alpha, double sigma2,
                                  bool want_full)
{
    const Index n = design.rows();
    const auto k = static_cast<Index>(active.size());
    RvmPosterior post;
    Matrix phi(n, k);
    Vector a(k);
    for (Index c = 0; c < k; ++c) {
        phi.col(c) = design.col(active[static_cast<std::size_t>(c)]);
        a[c] = alpha[active[static_cast<std::size_t>(c)]];
    }
    const double log2pi = std::log(2.0 * std::numbers::pi);
    if (k == 0) {
        post.mu = Vector();
        post.sigma_diag = Vector();
        post.residual_sq = targets.squaredNorm();
        post.log_evidence = -0.5 * (static_cast<double>(n) * (log2pi + std::log(sigma2)) + post.residual_sq / sigma2);
        return post;
    }
    if (k <= n) {
        Matrix h(k, k);
        if (gram != nullptr) {
            for (Index r = 0; r < k; ++r)
                for (Index c = 0; c < k; ++c)
                    h(r, c) = (*gram)(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(c)]);
        } else {
            h.noalias() = phi.transpose() * phi;
        }
        h /= sigma2;
        h.diagonal() += a;
        Eigen::LDLT<Matrix> ldlt(h);
        Vector rhs = phi.transpose() * targets / sigma2;
        post.mu = ldlt.solve(rhs);
        Matrix sigma = ldlt.solve(Matrix::Identity(k, k));
        post.sigma_diag = sigma.diagonal();
        if (want_full) post.sigma = 0.5 * (sigma + sigma.transpose());
        post.residual_sq = (targets - phi * post.mu).squaredNorm();
        double logdet_h = ldlt.vectorD().array().abs().log().sum();
        double logdet_c = static_cast<double>(n) * std::log(sigma2) - a.array().log().sum() + logdet_h;
        double quad = post.residual_sq / sigma2 + post.mu.dot(a.cwiseProduct(post.mu));
        post.log_evidence = -0.5 * (static_cast<double>(n) * log2pi + logdet_c + quad);
        return post;
    }
    // Woodbury: C = sigma^2 I + Phi A^{-1} Phi^T.
    Vector ainv = a.cwiseInverse();
    Matrix c = phi * ainv.asDiagonal() * phi.transpose();
    c.diagonal().array() += sigma2;
    Eigen::LLT<Matrix> llt(c);
    Vector cinv_t = llt.solve(targets);
    Matrix cinv_phi = llt.solve(phi);
    post.mu = ainv.cwiseProduct(phi.transpose() * cinv_t);
    post.sigma_diag.resize(k);
    for (Index j = 0; j < k; ++j)
        post.sigma_diag[j] = ainv[j] - ainv[j] * ainv[j] * phi.col(j).dot(cinv_phi.col(j));
    if (want_full) {
        Matrix s = -(ainv.asDiagonal() * (phi.transpose() * cinv_phi) * ainv.asDiagonal());
        s.diagonal() += ainv;
        post.sigma = 0.5 * (s + s.transpose());
    }
    post.residual_sq = (targets - phi * post.mu).squaredNorm();
    Matrix l = llt.matrixL();
    double logdet_c = 2.0 * l.diagonal().array().log().sum();
    post.log_evidence = -0.5 * (static_cast<double>(n) * log2pi + logdet_c + targets.dot(cinv_t));
    return post;
}

inline RvmResult rvm_classic(const Matrix& design, const Matrix* gram, const Vector& targets, const RvmConfig& config)
{
    const Index n = design.rows();
    const Index p = design.cols();
    require(n >= 1, "rvm_fit: need at least one sample");
    require_dims(targets.size() == n, "rvm_fit: target length must equal design rows");
    require(design.allFinite() && targets.allFinite(), "rvm_fit: non-finite input");

    RvmResult res;
    res.weights = Vector::Zero(p);
    res.precisions = Vector::Constant(p, std::numeric_limits<double>::infinity());
    res.pruned.assign(static_cast<std::size_t>(p), true);

    const double mean_sq = targets.squaredNorm() / static_cast<double>(n);
    const double var = n > 1 ? (targets.array() - targets.mean()).square().sum() / static_cast<double>(n - 1) : 0.0;
    if (mean_sq == 0.0) {
        res.noise_variance = 0.0;
        res.all_pruned = true;
        res.converged = true;
        res.warnings.push_back("rvm_fit: targets are identically zero; returning the zero model");
        return res;
    }
    const double floor = std::max(config.relative_noise_floor * mean_sq, std::numeric_limits<double>::min());
    double sigma2 = config.noise_variance ? *config.noise_variance : 0.1 * (var > 0.0 ? var : mean_sq);
    sigma2 = std::max(sigma2, floor);

    Vector alpha = Vector::Ones(p);
    auto active_of = [&](const Vector& al) {
        std::vector<Index> act;
        for (Index j = 0; j < p; ++j)
            if (std::isfinite(al[j]) && al[j] <= config.prune_threshold) act.push_back(j);
        return act;
    };

    struct State {
        Vector alpha;
        double sigma2;
        std::vector<Index> active;
        RvmPosterior post;
    };
    std::optional<State> accepted;

    auto em_step = [&](const State& s) {
        Vector al = s.alpha;
        double gamma_sum = 0.0;
        for (std::size_t c = 0; c < s.active.size(); ++c) {
            const Index j = s.active[c];
            const auto ci = static_cast<Index>(c);
            double second = s.post.mu[ci] * s.post.mu[ci] + s.post.sigma_diag[ci];
            gamma_sum += 1.0 - s.alpha[j] * s.post.sigma_diag[ci];
            al[j] = second > 0.0 ? 1.0 / second : std::numeric_limits<double>::infinity();
        }
        double s2 = s.sigma2;
        if (!config.noise_variance)
            s2 = std::max((s.post.residual_sq + s.sigma2 * gamma_sum) / static_cast<double>(n), floor);
        return std::make_pair(al, s2);
    };

    for (int it = 0; it < config.max_iter; ++it) {
        res.iterations = it + 1;
        std::vector<Index> active = active_of(alpha);
        RvmPosterior post = rvm_posterior(design, gram, targets, active, alpha, sigma2, false);
        if (!std::isfinite(post.log_evidence) || !post.mu.allFinite())
            throw Error("rvm_fit: non-finite evidence during iteration");

        if (accepted) {
            double prev = accepted->post.log_evidence;
            double slack = 1e-8 * std::max(1.0, std::abs(prev));
            if (post.log_evidence < prev - slack) {
                // Re-estimation overshot; take the monotone EM step instead.
                auto [al, s2] = em_step(*accepted);
                alpha = al;
                sigma2 = s2;
                ++res.fallback_steps;
                State retry{alpha, sigma2, active_of(alpha), {}};
                retry.post = rvm_posterior(design, gram, targets, retry.active, alpha, sigma2, false);
                if (!std::isfinite(retry.post.log_evidence)) throw Error("rvm_fit: non-finite evidence during iteration");
                active = retry.active;
                post = retry.post;
            }
        }
        double prev_evidence = accepted ? accepted->post.log_evidence : -std::numeric_limits<double>::infinity();
        accepted = State{alpha, sigma2, active, post};
        res.evidence_trace.push_back(post.log_evidence);
        if (active.empty()) break;

        if (std::isfinite(prev_evidence) &&
            std::abs(post.log_evidence - prev_evidence) < config.tol * std::max(1.0, std::abs(post.log_evidence))) {
            res.converged = true;
            break;
        }

        // MacKay re-estimation.
        double gamma_sum = 0.0;
        for (std::size_t c = 0; c < active.size(); ++c) {
            const Index j = active[c];
            const auto ci = static_cast<Index>(c);
            double gamma = 1.0 - alpha[j] * post.sigma_diag[ci];
            gamma_sum += gamma;
            double mu2 = post.mu[ci] * post.mu[ci];
            alpha[j] = (gamma > 0.0 && mu2 > 0.0) ? gamma / mu2 : std::numeric_limits<double>::infinity();
        }
        if (!config.noise_variance) {
            double dof = static_cast<double>(n) - gamma_sum;
            sigma2 = dof > 1e-12 ? post.residual_sq / dof : floor;
            sigma2 = std::max(sigma2, floor);
        }
    }

    const State& fin = *accepted;
    res.noise_variance = fin.sigma2;
    res.active_set = fin.active;
    if (fin.active.empty()) {
        res.all_pruned = true;
        res.noise_variance = var;
        res.warnings.push_back("rvm_fit: every coefficient was pruned; returning the zero model");
        return res;
    }
    const bool full = static_cast<Index>(fin.active.size()) <= config.max_covariance_size;
    RvmPosterior post = rvm_posterior(design, gram, targets, fin.active, fin.alpha, fin.sigma2, full);
    for (std::size_t c = 0; c < fin.active.size(); ++c) {
        const Index j = fin.active[c];
        res.weights[j] = post.mu[static_cast<Index>(c)];
        res.precisions[j] = fin.alpha[j];
        res.pruned[static_cast<std::size_t>(j)] = false;
    }
    res.posterior_variance = post.sigma_diag;
    res.posterior_covariance = post.sigma;
    if (!full) res.warnings.push_back("rvm_fit: active set too large; only posterior variances returned");
    return res;
}

/// Contribution of one basis function to the log evidence, given its
/// leave-one-out sparsity s and quality q.
inline double basis_likelihood(double alpha, double s, double q)
{
    return 0.5 * (std::log(alpha) - std::log(alpha + s) + q * q / (alpha + s));
}

/// State of the sequential fit at fixed sigma^2. Everything is kept in the
/// sigma^2-scaled form K = Phi_A^T Phi_A + sigma^2 diag(alpha_A), so the
/// near-noiseless case does not divide by tiny variances:
///   mu = K^{-1} Phi_A^T t,  Sigma = sigma^2 K^{-1},
///   s_scaled(m) = phi_m^T (I - Phi_A K^{-1} Phi_A^T) phi_m = sigma^2 S_m,
///   q_scaled(m) = phi_m^T (t - Phi_A mu) = sigma^2 Q_m.
class SequentialRvm {
public:
    SequentialRvm(const Matrix& design, const Matrix* gram, const Vector& targets)
        : design_(design), gram_(gram), targets_(targets), p_(design.cols())
    {
        col_sq_.resize(p_);
        for (Index j = 0; j < p_; ++j) col_sq_[j] = gram ? (*gram)(j, j) : design.col(j).squaredNorm();
        alpha_ = Vector::Constant(p_, std::numeric_limits<double>::infinity());
    }

    Index p() const noexcept { return p_; }
    const std::vector<Index>& active() const noexcept { return active_; }
    const Vector& alpha() const noexcept { return alpha_; }
    double sigma2() const noexcept { return sigma2_; }
    double log_evidence() const noexcept { return log_evidence_; }
    double col_sq(Index m) const { return col_sq_[m]; }

    /// Position of column m in the active list, or -1.
    Index position(Index m) const
    {
        auto it = std::find(active_.begin(), active_.end(), m);
        return it == active_.end() ? -1 : static_cast<Index>(it - active_.begin());
    }

    /// Sparsity and quality (s_m, q_m) in the usual unscaled form.
    std::pair<double, double> sparsity_quality(Index m, Index pos) const
    {
        if (pos >= 0) {
            const double sigma_mm = sigma2_ * kinv_(pos, pos);
            return {1.0 / sigma_mm - alpha_[m], mu_[pos] / sigma_mm};
        }
        return {s_scaled_[m] / sigma2_, q_scaled_[m] / sigma2_};
    }

    /// Rebuilds every derived quantity from (active, alpha, sigma2).
    void recompute(double sigma2)
    {
        sigma2_ = sigma2;
        const auto k = static_cast<Index>(active_.size());
        const Index n = design_.rows();
        Matrix b(k, p_);  // G(A, :)
        for (Index c = 0; c < k; ++c) b.row(c) = gram_column(active_[static_cast<std::size_t>(c)]).transpose();
        Matrix kmat(k, k);
        Vector rhs(k);
        for (Index c = 0; c < k; ++c) {
            for (Index d = 0; d < k; ++d) kmat(c, d) = b(c, active_[static_cast<std::size_t>(d)]);
            kmat(c, c) += sigma2_ * alpha_[active_[static_cast<std::size_t>(c)]];
            rhs[c] = design_.col(active_[static_cast<std::size_t>(c)]).dot(targets_);
        }
        Vector residual = targets_;
        s_scaled_ = col_sq_;
        double logdet_k = 0.0;
        if (k > 0) {
            Eigen::LLT<Matrix> llt(kmat);
            if (llt.info() != Eigen::Success) throw Error("rvm_fit: posterior precision is not positive definite");
            kinv_ = llt.solve(Matrix::Identity(k, k));
            kinv_ = 0.5 * (kinv_ + kinv_.transpose()).eval();
            mu_ = llt.solve(rhs);
            for (Index c = 0; c < k; ++c) residual -= mu_[c] * design_.col(active_[static_cast<std::size_t>(c)]);
            s_scaled_ -= llt.matrixL().solve(b).colwise().squaredNorm().transpose();
            logdet_k = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        } else {
            kinv_.resize(0, 0);
            mu_.resize(0);
        }
        q_scaled_ = design_.transpose() * residual;
        residual_sq_ = residual.squaredNorm();

        // log|C| = N log sigma^2 - sum log alpha + log|K| - k log sigma^2.
        double sum_log_alpha = 0.0, prior_quad = 0.0;
        for (Index c = 0; c < k; ++c) {
            const double a = alpha_[active_[static_cast<std::size_t>(c)]];
            sum_log_alpha += std::log(a);
            prior_quad += a * mu_[c] * mu_[c];
        }
        const double log_sigma2 = std::log(sigma2_);
        const double logdet_c = static_cast<double>(n - k) * log_sigma2 - sum_log_alpha + logdet_k;
        const double quad = residual_sq_ / sigma2_ + prior_quad;
        log_evidence_ = -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + logdet_c + quad);
    }

    void add(Index m, double new_alpha, double gain)
    {
        const auto k = static_cast<Index>(active_.size());
        Vector g_am(k);
        const Vector& gm = gram_column(m);
        for (Index c = 0; c < k; ++c) g_am[c] = gm[active_[static_cast<std::size_t>(c)]];
        const Vector v = kinv_ * g_am;
        const Vector proj = gm - cross(v);  // phi_j^T (I - Phi_A K^{-1} Phi_A^T) phi_m for all j
        const double d = s_scaled_[m] + sigma2_ * new_alpha;
        const double mu_m = q_scaled_[m] / d;

        Matrix grown(k + 1, k + 1);
        grown.topLeftCorner(k, k) = kinv_ + (v * v.transpose()) / d;
        grown.topRightCorner(k, 1) = -v / d;
        grown.bottomLeftCorner(1, k) = -v.transpose() / d;
        grown(k, k) = 1.0 / d;
        kinv_ = std::move(grown);
        Vector mu(k + 1);
        mu.head(k) = mu_ - v * mu_m;
        mu[k] = mu_m;
        mu_ = std::move(mu);

        q_scaled_ -= mu_m * proj;
        s_scaled_ -= proj.cwiseAbs2() / d;
        active_.push_back(m);
        alpha_[m] = new_alpha;
        log_evidence_ += gain;
    }

    void reestimate(Index pos, double new_alpha, double gain)
    {
        const Index m = active_[static_cast<std::size_t>(pos)];
        const double delta = sigma2_ * (new_alpha - alpha_[m]);
        const Vector w = kinv_.col(pos);
        const double denom = 1.0 + delta * w[pos];
        const double kappa = delta * mu_[pos] / denom;
        kinv_ -= (delta / denom) * (w * w.transpose());
        mu_ -= kappa * w;
        const Vector z = cross(w);
        q_scaled_ += kappa * z;
        s_scaled_ += (delta / denom) * z.cwiseAbs2();
        alpha_[m] = new_alpha;
        log_evidence_ += gain;
    }

    void remove(Index pos, double gain)
    {
        const Index m = active_[static_cast<std::size_t>(pos)];
        const Vector w = kinv_.col(pos);
        const double wc = w[pos];
        const double kappa = mu_[pos] / wc;
        mu_ -= kappa * w;
        const Vector z = cross(w);
        q_scaled_ += kappa * z;
        s_scaled_ += z.cwiseAbs2() / wc;
        kinv_ -= (w * w.transpose()) / wc;
        const auto k = static_cast<Index>(active_.size());
        const Index tail = k - pos - 1;
        Matrix shrunk(k - 1, k - 1);
        shrunk.topLeftCorner(pos, pos) = kinv_.topLeftCorner(pos, pos);
        shrunk.topRightCorner(pos, tail) = kinv_.topRightCorner(pos, tail);
        shrunk.bottomLeftCorner(tail, pos) = kinv_.bottomLeftCorner(tail, pos);
        shrunk.bottomRightCorner(tail, tail) = kinv_.bottomRightCorner(tail, tail);
        kinv_ = std::move(shrunk);
        Vector mu(k - 1);
        mu.head(pos) = mu_.head(pos);
        mu.tail(tail) = mu_.tail(tail);
        mu_ = std::move(mu);
        active_.erase(active_.begin() + pos);
        alpha_[m] = std::numeric_limits<double>::infinity();
        log_evidence_ += gain;
    }

    /// sigma^2 <- |t - Phi mu|^2 / (N - sum gamma).
    double noise_estimate() const
    {
        double gamma_sum = 0.0;
        for (std::size_t c = 0; c < active_.size(); ++c) {
            const auto i = static_cast<Index>(c);
            gamma_sum += 1.0 - sigma2_ * alpha_[active_[c]] * kinv_(i, i);
        }
        Vector residual = targets_;
        for (std::size_t c = 0; c < active_.size(); ++c) residual -= mu_[static_cast<Index>(c)] * design_.col(active_[c]);
        const double dof = static_cast<double>(design_.rows()) - gamma_sum;
        return dof > 1e-12 ? residual.squaredNorm() / dof : 0.0;
    }

private:
    const Vector& gram_column(Index j)
    {
        Vector& c = gram_cache_[j];
        if (c.size() == 0) c = gram_ ? Vector(gram_->col(j)) : Vector(design_.transpose() * design_.col(j));
        return c;
    }

    /// G(:, A) w.
    Vector cross(const Vector& w)
    {
        if (gram_) {
            Vector out = Vector::Zero(p_);
            for (std::size_t c = 0; c < active_.size(); ++c) out += w[static_cast<Index>(c)] * gram_->col(active_[c]);
            return out;
        }
        Vector combo = Vector::Zero(design_.rows());
        for (std::size_t c = 0; c < active_.size(); ++c) combo += w[static_cast<Index>(c)] * design_.col(active_[c]);
        return design_.transpose() * combo;
    }

    const Matrix& design_;
    const Matrix* gram_;
    const Vector& targets_;
    Index p_;
    Vector col_sq_;
    std::map<Index, Vector> gram_cache_;
    std::vector<Index> active_;
    Vector alpha_;
    Matrix kinv_;
    Vector mu_;
    Vector s_scaled_;
    Vector q_scaled_;
    double residual_sq_ = 0.0;
    double sigma2_ = 1.0;
    double log_evidence_ = 0.0;
};

/// Sequential evidence maximisation: each step takes the single add,
/// re-estimate or delete action with the largest evidence gain at fixed
/// sigma^2. Between rounds sigma^2 is re-estimated. max_iter bounds the number
/// of rounds.
inline RvmResult rvm_sequential(const Matrix& design, const Matrix* gram, const Vector& targets, const RvmConfig& config)
{
    const Index n = design.rows();
    const Index p = design.cols();
    require(n >= 1, "rvm_fit: need at least one sample");
    require_dims(targets.size() == n, "rvm_fit: target length must equal design rows");
    require(design.allFinite() && targets.allFinite(), "rvm_fit: non-finite input");
    constexpr double inf = std::numeric_limits<double>::infinity();

    RvmResult res;
    res.weights = Vector::Zero(p);
    res.precisions = Vector::Constant(p, inf);
    res.pruned.assign(static_cast<std::size_t>(p), true);

    const double mean_sq = targets.squaredNorm() / static_cast<double>(n);
    const double var = n > 1 ? (targets.array() - targets.mean()).square().sum() / static_cast<double>(n - 1) : 0.0;
    if (mean_sq == 0.0) {
        res.converged = true;
        res.all_pruned = true;
        res.warnings.push_back("rvm_fit: targets are identically zero; returning the zero model");
        return res;
    }
    const double floor = std::max(config.relative_noise_floor * mean_sq, std::numeric_limits<double>::min());
    double sigma2 = config.noise_variance ? *config.noise_variance : 0.1 * (var > 0.0 ? var : mean_sq);
    sigma2 = std::max(sigma2, floor);
    const double add_ratio =
        std::max(1.0, config.add_ratio ? *config.add_ratio : 2.0 * std::log(static_cast<double>(std::max<Index>(p, 2))));
    const Index max_actions = 4 * p + 100;
    constexpr Index refresh_every = 200;

    SequentialRvm fit(design, gram, targets);
    fit.recompute(sigma2);
    res.evidence_trace.push_back(fit.log_evidence());

    for (int round = 0; round < config.max_iter; ++round) {
        const double round_start = fit.log_evidence();
        Index actions = 0;
        while (actions < max_actions) {
            const double gain_floor = 1e-12 * std::max(1.0, std::abs(fit.log_evidence()));
            std::vector<Index> pos(static_cast<std::size_t>(p), -1);
            for (std::size_t c = 0; c < fit.active().size(); ++c) pos[static_cast<std::size_t>(fit.active()[c])] = static_cast<Index>(c);

            Index best = -1;
            double best_gain = 0.0, best_alpha = inf;
            double max_log_change = 0.0;
            bool structural = false;
            for (Index m = 0; m < p; ++m) {
                if (fit.col_sq(m) <= 0.0) continue;
                const Index c = pos[static_cast<std::size_t>(m)];
                const auto [sm, qm] = fit.sparsity_quality(m, c);
                if (!(sm > 0.0)) continue;
                const double theta = qm * qm - sm;
                double new_alpha = theta > 0.0 ? sm * sm / theta : inf;
                if (new_alpha > config.prune_threshold) new_alpha = inf;
                double gain = 0.0;
                if (c >= 0) {
                    const double old_l = basis_likelihood(fit.alpha()[m], sm, qm);
                    if (std::isinf(new_alpha)) {
                        gain = -old_l;
                        structural = true;
                    } else {
                        gain = basis_likelihood(new_alpha, sm, qm) - old_l;
                        max_log_change = std::max(max_log_change, std::abs(std::log(new_alpha / fit.alpha()[m])));
                    }
                } else if (!std::isinf(new_alpha) && qm * qm > add_ratio * sm) {
                    gain = 0.5 * (std::log(sm / (qm * qm)) + theta / sm);
                    structural = true;
                }
                if (gain > best_gain) {
                    best_gain = gain;
                    best = m;
                    best_alpha = new_alpha;
                }
            }
            if (best < 0 || best_gain <= gain_floor || (!structural && max_log_change < config.tol)) break;

            const Index c = pos[static_cast<std::size_t>(best)];
            if (c < 0) {
                fit.add(best, best_alpha, best_gain);
            } else if (std::isinf(best_alpha)) {
                fit.remove(c, best_gain);
            } else {
                fit.reestimate(c, best_alpha, best_gain);
            }
            ++actions;
            ++res.iterations;
            if (actions % refresh_every == 0) fit.recompute(fit.sigma2());
            if (!std::isfinite(fit.log_evidence())) throw Error("rvm_fit: non-finite evidence during iteration");
            res.evidence_trace.push_back(fit.log_evidence());
        }
        // Rank-one updates drift slightly; restart the round from exact values.
        fit.recompute(fit.sigma2());

        if (config.noise_variance) {
            res.converged = actions < max_actions;
            break;
        }
        const double s2 = std::max(fit.noise_estimate(), floor);
        if (s2 != fit.sigma2()) {
            const double before = fit.log_evidence();
            const double old_s2 = fit.sigma2();
            fit.recompute(s2);
            if (fit.log_evidence() < before) {
                fit.recompute(old_s2);
                ++res.fallback_steps;
            }
        }
        res.evidence_trace.push_back(fit.log_evidence());
        if (std::abs(fit.log_evidence() - round_start) <= config.tol * std::max(1.0, std::abs(fit.log_evidence()))) {
            res.converged = true;
            break;
        }
    }

    std::vector<Index> active = fit.active();
    std::sort(active.begin(), active.end());
    res.noise_variance = fit.sigma2();
    res.active_set = active;
    if (active.empty()) {
        res.all_pruned = true;
        res.noise_variance = var;
        res.warnings.push_back("rvm_fit: every coefficient was pruned; returning the zero model");
        return res;
    }
    const bool full = static_cast<Index>(active.size()) <= config.max_covariance_size;
    RvmPosterior post = rvm_posterior(design, gram, targets, active, fit.alpha(), fit.sigma2(), full);
    for (std::size_t c = 0; c < active.size(); ++c) {
        const Index j = active[c];
        res.weights[j] = post.mu[static_cast<Index>(c)];
        res.precisions[j] = fit.alpha()[j];
        res.pruned[static_cast<std::size_t>(j)] = false;
    }
    res.posterior_variance = post.sigma_diag;
    res.posterior_covariance = post.sigma;
    if (!full) res.warnings.push_back("rvm_fit: active set too large; only posterior variances returned");
    return res;
}

inline RvmResult rvm_fit_impl(const Matrix& design, const Matrix* gram, const Vector& targets, const RvmConfig& config)
{
    return config.method == RvmMethod::classic ? rvm_classic(design, gram, targets, config)
                                               : rvm_sequential(design, gram, targets, config);
}

} // namespace detail

/// Relevance vector machine: evidence maximisation over per-coefficient
/// precisions with hard pruning of irrelevant columns.
inline RvmResult rvm_fit(const Matrix& design, const Vector& targets, const RvmConfig& config = {})
{
    return detail::rvm_fit_impl(design, nullptr, targets, config);
}

struct SparsityRow {
    Index output_index = 0;
    Index n_active = 0;
    Index n_terms = 0;
    double sigma2 = 0.0;
};

struct PceFit {
    PceExpansion expansion;
    std::vector<SparsityRow> sparsity;
    Warnings warnings;
};

/// One RVM fit per output column against the shared Hermite design.
inline PceFit fit_forecast_pce(const Matrix& xi, const Matrix& values, std::shared_ptr<const MultiIndexSet> index_set,
                               const RvmConfig& config = {}, std::size_t threads = 1)
{
    require_dims(xi.rows() == values.rows(), "fit_forecast_pce: sample counts differ");
    const Matrix design = evaluate_basis(*index_set, xi);
    std::optional<Matrix> gram;
    if (design.cols() <= design.rows()) gram = design.transpose() * design;

    const Index d = values.cols();
    PceFit fit;
    fit.expansion.index_set = index_set;
    fit.expansion.coefficients = Matrix::Zero(d, design.cols());
    fit.sparsity.resize(static_cast<std::size_t>(d));
    std::vector<Warnings> per_output(static_cast<std::size_t>(d));
    parallel_for(static_cast<std::size_t>(d), threads, [&](std::size_t o) {
        const auto out = static_cast<Index>(o);
        RvmResult r = detail::rvm_fit_impl(design, gram ? &*gram : nullptr, values.col(out), config);
        fit.expansion.coefficients.row(out) = r.weights.transpose();
        fit.sparsity[o] = {out, static_cast<Index>(r.active_set.size()), design.cols(), r.noise_variance};
        per_output[o] = r.warnings;
    });
    for (auto& w : per_output) fit.warnings.insert(fit.warnings.end(), w.begin(), w.end());
    return fit;
}

} // namespace rombayes

#endif
