#ifndef ROMBAYES_COMMON_HPP
#define ROMBAYES_COMMON_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rombayes {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state produced by a time integrator.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : Error(what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Newton iteration of an implicit step failed to reach its tolerance.
class StepFailureError : public Error {
public:
    StepFailureError(const std::string& what, std::size_t step)
        : Error(what), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class RankDeficiencyError : public Error {
public:
    RankDeficiencyError(const std::string& what, Index numerical_rank)
        : Error(what), rank_(numerical_rank) {}
    Index numerical_rank() const noexcept { return rank_; }

private:
    Index rank_;
};

class IncompatibleDiscretizationError : public Error {
public:
    using Error::Error;
};

class ConditioningError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Soft diagnostics attached to results instead of thrown.
using Warnings = std::vector<std::string>;

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

inline void require(bool condition, const std::string& message)
{
    if (!condition) throw Error(message);
}

inline void require_dims(bool condition, const std::string& message)
{
    if (!condition) throw DimensionError(message);
}

inline bool strictly_increasing(const Vector& v)
{
    for (Index i = 1; i < v.size(); ++i)
        if (!(v[i] > v[i - 1])) return false;
    return true;
}

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Number of correction parameters for n reduced modes: n^2 (1 + n).
constexpr Index correction_size(Index n_modes) { return n_modes * n_modes * (1 + n_modes); }

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer; used to derive independent stream keys.
constexpr std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Engine whose output depends only on (seed, stream, index). Member i of an
/// ensemble draws from stream_engine(seed, tag, i) so results do not depend
/// on evaluation order.
inline std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
{
    std::uint64_t key = mix64(seed ^ mix64(stream ^ mix64(index)));
    std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

/// Stream tags keep prior draws, observation noise and germ samples apart.
namespace streams {
inline constexpr std::uint64_t prior = 0x1001;
inline constexpr std::uint64_t noise = 0x2002;
inline constexpr std::uint64_t germ = 0x3003;
inline constexpr std::uint64_t test = 0x4004;
} // namespace streams

inline double standard_normal(std::mt19937_64& engine)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(engine);
}

// ---------------------------------------------------------------------------
// Parallel loop
// ---------------------------------------------------------------------------

/// Runs body(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once, so writes to per-index slots are race free and the
/// result is independent of scheduling. The first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body)
{
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    threads = std::min(threads, n);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    workers.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        workers.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += threads) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
}

inline std::size_t default_threads()
{
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

// ---------------------------------------------------------------------------
// Dense linear algebra helpers
// ---------------------------------------------------------------------------

struct PseudoInverse {
    Matrix matrix;
    Index rank = 0;
};

/// Pseudo-inverse of a symmetric matrix; eigenvalues whose magnitude is below
/// relative_cutoff * max|eigenvalue| are treated as zero.
inline PseudoInverse symmetric_pinv(const Matrix& a, double relative_cutoff = 1e-10)
{
    require_dims(a.rows() == a.cols(), "symmetric_pinv: matrix must be square");
    PseudoInverse out;
    out.matrix = Matrix::Zero(a.rows(), a.cols());
    if (a.size() == 0) return out;
    Matrix sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    const Vector& lambda = eig.eigenvalues();
    double largest = lambda.cwiseAbs().maxCoeff();
    if (largest == 0.0) return out;
    Vector inv = Vector::Zero(lambda.size());
    for (Index i = 0; i < lambda.size(); ++i) {
        if (std::abs(lambda[i]) > relative_cutoff * largest) {
            inv[i] = 1.0 / lambda[i];
            ++out.rank;
        }
    }
    const Matrix& v = eig.eigenvectors();
    out.matrix = v * inv.asDiagonal() * v.transpose();
    return out;
}

/// Symmetric positive semidefinite factor F with F F^T = a. Eigenvalues below
/// clip_tol (absolute) are set to zero.
inline Matrix psd_factor(const Matrix& a, double clip_tol = 0.0)
{
    Matrix sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    Vector root = eig.eigenvalues().unaryExpr([clip_tol](double l) { return l > clip_tol ? std::sqrt(l) : 0.0; });
    return eig.eigenvectors() * root.asDiagonal();
}

} // namespace rombayes

#endif
