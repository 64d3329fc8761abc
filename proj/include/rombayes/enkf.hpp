#ifndef ROMBAYES_ENKF_HPP
#define ROMBAYES_ENKF_HPP

#include "rombayes/prior.hpp"

#include <sstream>

namespace rombayes {

/// Predicted observations y_f for each ensemble member, flattened time-major
/// (all modes of the first observation time, then the next time, ...).
struct ForecastSet {
    Matrix predictions;         // Z x (n_obs * n_modes), noise included when noise_applied
    Matrix noiseless;           // same shape, model output only
    std::vector<Index> obs_indices;
    Vector obs_times;
    Index n_modes = 0;
    bool noise_applied = false;
    std::vector<bool> valid;    // false for members whose integration failed

    Index n_valid() const { return static_cast<Index>(std::count(valid.begin(), valid.end(), true)); }
};

struct ForecastOptions {
    std::size_t threads = 1;
    double max_diverged_fraction = 0.1;
    IntegratorOptions integrator;
};

/// Flattens rows `obs_indices` of a trajectory (time-major, mode-minor).
inline Vector flatten_observations(const Matrix& states, const std::vector<Index>& obs_indices)
{
    const Index n = states.cols();
    Vector out(static_cast<Index>(obs_indices.size()) * n);
    for (std::size_t t = 0; t < obs_indices.size(); ++t)
        out.segment(static_cast<Index>(t) * n, n) = states.row(obs_indices[t]).transpose();
    return out;
}

/// Runs the corrected ROM for every member and adds independent Gaussian
/// observation noise drawn from stream (seed, member).
inline ForecastSet forecast_ensemble(const Ensemble& ensemble, const ReducedSystem& system, const Vector& a0,
                                     const Vector& times, const std::vector<Index>& obs_indices,
                                     const NoiseModel& noise, std::uint64_t seed, const ForecastOptions& options = {})
{
    const Index n = system.n_modes();
    require_dims(ensemble.dim() == correction_size(n), "forecast_ensemble: ensemble width must equal n^2 (1 + n)");
    require_dims(noise.n_modes() == n, "forecast_ensemble: noise model has wrong mode count");
    require(!obs_indices.empty(), "forecast_ensemble: no observation times");
    for (Index idx : obs_indices)
        require(idx >= 0 && idx < times.size(), "forecast_ensemble: observation index outside the time grid");

    const Index z = ensemble.size();
    const Index m = static_cast<Index>(obs_indices.size()) * n;
    ForecastSet out;
    out.n_modes = n;
    out.obs_indices = obs_indices;
    out.obs_times.resize(static_cast<Index>(obs_indices.size()));
    for (std::size_t t = 0; t < obs_indices.size(); ++t) out.obs_times[static_cast<Index>(t)] = times[obs_indices[t]];
    out.predictions = Matrix::Zero(z, m);
    out.noiseless = Matrix::Zero(z, m);
    out.noise_applied = true;
    std::vector<char> ok(static_cast<std::size_t>(z), 0);

    parallel_for(static_cast<std::size_t>(z), options.threads, [&](std::size_t i) {
        const auto row = static_cast<Index>(i);
        CorrectionVector q{n, ensemble.members.row(row).transpose()};
        Vector clean;
        try {
            clean = flatten_observations(integrate_rom(system, q, a0, times, options.integrator).states, obs_indices);
        } catch (const DivergenceError&) {
            return;
        } catch (const StepFailureError&) {
            return;
        }
        auto engine = stream_engine(seed, streams::noise, static_cast<std::uint64_t>(i));
        Vector noisy = clean;
        for (Index e = 0; e < m; ++e) noisy[e] += noise.std_per_mode[e % n] * standard_normal(engine);
        out.noiseless.row(row) = clean.transpose();
        out.predictions.row(row) = noisy.transpose();
        ok[i] = 1;
    });

    out.valid.resize(static_cast<std::size_t>(z));
    for (std::size_t i = 0; i < ok.size(); ++i) out.valid[i] = ok[i] != 0;
    const Index diverged = z - out.n_valid();
    if (static_cast<double>(diverged) > options.max_diverged_fraction * static_cast<double>(z)) {
        std::ostringstream msg;
        msg << "forecast_ensemble: " << diverged << " of " << z
            << " members diverged; the prior is probably too wide";
        throw DivergenceError(msg.str(), 0);
    }
    return out;
}

/// Unbiased cross-covariance of the columns of X (Z x p) and Y (Z x r).
inline Matrix statistical_covariance(const Matrix& x, const Matrix& y)
{
    require_dims(x.rows() == y.rows(), "statistical_covariance: row counts differ");
    require(x.rows() >= 2, "statistical_covariance: need at least two samples");
    Matrix xc = x.rowwise() - x.colwise().mean();
    Matrix yc = y.rowwise() - y.colwise().mean();
    return (xc.transpose() * yc) / static_cast<double>(x.rows() - 1);
}

struct KalmanGain {
    Matrix gain;
    Index rank = 0;
};

/// K = C_qy C_y^+ with a relative eigenvalue cutoff on the pseudo-inverse.
inline KalmanGain kalman_gain(const Matrix& c_qy, const Matrix& c_y, double relative_cutoff = 1e-10)
{
    require_dims(c_y.rows() == c_y.cols() && c_qy.cols() == c_y.rows(), "kalman_gain: shape mismatch");
    PseudoInverse pinv = symmetric_pinv(c_y, relative_cutoff);
    return {c_qy * pinv.matrix, pinv.rank};
}

struct EnkfOptions {
    double pinv_cutoff = 1e-10;
};

struct EnkfUpdate {
    Ensemble posterior;
    Matrix gain;           // s x m
    Index gain_rank = 0;
    Index members_used = 0;
};

/// q_a(i) = q_f(i) + K (y - y_f(i)), with K from the sample covariances of the
/// valid members. Inactive coordinates are left untouched.
inline EnkfUpdate enkf_update(const Ensemble& ensemble, const ForecastSet& forecasts, const Vector& y,
                              const EnkfOptions& options = {})
{
    require_dims(forecasts.predictions.rows() == ensemble.size(), "enkf_update: forecast rows must equal members");
    require_dims(y.size() == forecasts.predictions.cols(), "enkf_update: observation length mismatch");
    require(forecasts.noise_applied, "enkf_update: forecasts must carry observation noise");

    std::vector<Index> rows;
    for (Index i = 0; i < ensemble.size(); ++i)
        if (forecasts.valid.empty() || forecasts.valid[static_cast<std::size_t>(i)]) rows.push_back(i);
    require(rows.size() >= 2, "enkf_update: fewer than two valid members");

    const auto used = static_cast<Index>(rows.size());
    Matrix q(used, ensemble.dim());
    Matrix yf(used, forecasts.predictions.cols());
    for (Index r = 0; r < used; ++r) {
        q.row(r) = ensemble.members.row(rows[static_cast<std::size_t>(r)]);
        yf.row(r) = forecasts.predictions.row(rows[static_cast<std::size_t>(r)]);
    }

    KalmanGain k = kalman_gain(statistical_covariance(q, yf), statistical_covariance(yf, yf), options.pinv_cutoff);
    if (!ensemble.active_mask.empty())
        for (Index c = 0; c < ensemble.dim(); ++c)
            if (!ensemble.active_mask[static_cast<std::size_t>(c)]) k.gain.row(c).setZero();

    EnkfUpdate out;
    out.gain = k.gain;
    out.gain_rank = k.rank;
    out.members_used = used;
    out.posterior.seed = ensemble.seed;
    out.posterior.active_mask = ensemble.active_mask;
    Matrix innovation = (-yf).rowwise() + y.transpose();  // used x m
    out.posterior.members = q + innovation * k.gain.transpose();
    if (!ensemble.active_mask.empty())
        for (Index c = 0; c < ensemble.dim(); ++c)
            if (!ensemble.active_mask[static_cast<std::size_t>(c)]) out.posterior.members.col(c) = q.col(c);
    return out;
}

} // namespace rombayes

#endif
