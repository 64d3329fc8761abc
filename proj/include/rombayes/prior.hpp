#ifndef ROMBAYES_PRIOR_HPP
#define ROMBAYES_PRIOR_HPP

#include "rombayes/rom.hpp"

#include <sstream>

namespace rombayes {

/// Independent Gaussian prior over the packed correction vector.
struct GaussianPrior {
    Vector mean;
    Vector std;
    std::vector<bool> active_mask;
    Warnings warnings;

    Index size() const noexcept { return mean.size(); }
    Index n_active() const { return static_cast<Index>(std::count(active_mask.begin(), active_mask.end(), true)); }

    /// Diagonal prior covariance; inactive entries get zero variance.
    Vector variance() const
    {
        Vector v = std.array().square();
        for (Index k = 0; k < v.size(); ++k)
            if (!active_mask[static_cast<std::size_t>(k)]) v[k] = 0.0;
        return v;
    }

    void validate() const
    {
        require_dims(std.size() == mean.size() && static_cast<Index>(active_mask.size()) == mean.size(),
                     "GaussianPrior: inconsistent lengths");
        require(mean.allFinite(), "GaussianPrior: mean must be finite");
        for (Index k = 0; k < mean.size(); ++k)
            if (active_mask[static_cast<std::size_t>(k)]) require(std[k] >= 0.0, "GaussianPrior: negative std");
    }
};

/// Diagonal observation noise, one standard deviation per mode.
struct NoiseModel {
    Vector std_per_mode;
    Warnings warnings;

    Index n_modes() const noexcept { return std_per_mode.size(); }
};

struct PriorOptions {
    double relative_scale = 0.01;
    double floor = 1e-6;
    /// Read relative_scale * mean|block| as a variance instead of a std.
    bool scale_is_variance = false;
};

inline GaussianPrior build_prior(const ReducedSystem& system, const PriorOptions& options = {})
{
    require(options.relative_scale > 0.0, "build_prior: relative_scale must be positive");
    const Index n = system.n_modes();
    const Index s = correction_size(n);
    GaussianPrior prior;
    prior.mean = Vector::Zero(s);
    prior.std.resize(s);
    prior.active_mask.assign(static_cast<std::size_t>(s), true);

    auto block_std = [&](double mean_abs, const char* name) {
        if (mean_abs < 1e-14) {
            prior.warnings.push_back(std::string("build_prior: ") + name +
                                     " block is degenerate; using absolute floor");
            return options.floor;
        }
        double v = options.relative_scale * mean_abs;
        return options.scale_is_variance ? std::sqrt(v) : v;
    };
    const double a_std = block_std(system.diffusion.cwiseAbs().mean(), "diffusion");
    const double c_std = block_std(system.convection.flat().cwiseAbs().mean(), "convection");
    prior.std.head(n * n).setConstant(a_std);
    prior.std.tail(n * n * n).setConstant(c_std);
    return prior;
}

struct NoiseOptions {
    double relative_scale = 0.001;
    double floor = 1e-9;
};

/// std_j = relative_scale * max_i |a_ij|.
inline NoiseModel default_noise(const MeasurementSet& measurements, const NoiseOptions& options = {})
{
    require(measurements.n_times() > 0 && measurements.n_modes() > 0, "default_noise: empty measurements");
    require(options.relative_scale >= 0.0, "default_noise: relative_scale must be non-negative");
    NoiseModel noise;
    noise.std_per_mode.resize(measurements.n_modes());
    if (options.relative_scale == 0.0) {
        noise.std_per_mode.setZero();
        noise.warnings.push_back(
            "default_noise: zero observation noise; the Kalman gain may be badly conditioned");
        return noise;
    }
    for (Index j = 0; j < measurements.n_modes(); ++j) {
        double peak = measurements.coefficients.col(j).cwiseAbs().maxCoeff();
        if (peak == 0.0) {
            noise.std_per_mode[j] = options.floor;
            std::ostringstream msg;
            msg << "default_noise: mode " << j << " is identically zero; using floor " << options.floor;
            noise.warnings.push_back(msg.str());
        } else {
            noise.std_per_mode[j] = options.relative_scale * peak;
        }
    }
    return noise;
}

/// Samples of the uncertain parameter, one row per member.
struct Ensemble {
    Matrix members;  // Z x s
    std::uint64_t seed = 0;
    std::vector<bool> active_mask;

    Index size() const noexcept { return members.rows(); }
    Index dim() const noexcept { return members.cols(); }
    Vector mean() const { return members.colwise().mean().transpose(); }
};

/// Member i draws from its own stream keyed by (seed, i).
inline Ensemble sample_prior(const GaussianPrior& prior, Index count, std::uint64_t seed)
{
    prior.validate();
    require(count >= 2, "sample_prior: need at least two members for a covariance");
    Ensemble ens;
    ens.seed = seed;
    ens.active_mask = prior.active_mask;
    ens.members.resize(count, prior.size());
    for (Index i = 0; i < count; ++i) {
        auto engine = stream_engine(seed, streams::prior, static_cast<std::uint64_t>(i));
        for (Index k = 0; k < prior.size(); ++k) {
            double z = standard_normal(engine);
            ens.members(i, k) = prior.active_mask[static_cast<std::size_t>(k)] ? prior.mean[k] + prior.std[k] * z
                                                                                : prior.mean[k];
        }
    }
    return ens;
}

} // namespace rombayes

#endif
