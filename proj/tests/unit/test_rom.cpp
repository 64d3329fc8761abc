#include "rombayes/rom.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace rombayes;
using rombayes::testing::random_matrix;
using rombayes::testing::random_vector;

namespace {

PodBasis sine_basis(const Grid1D& g, Index n)
{
    Matrix modes(g.n_cells(), n);
    Vector x = g.centers();
    for (Index k = 0; k < n; ++k) modes.col(k) = (std::numbers::pi * static_cast<double>(k + 1) * x.array()).sin();
    detail::w_orthonormalize(modes, g.weights());
    return {modes, Vector::Ones(n), g.weights()};
}

ReducedSystem random_system(Index n, std::mt19937_64& rng)
{
    ReducedSystem s = ReducedSystem::zeros(n, 0.3);
    s.diffusion = -2.0 * Matrix::Identity(n, n) + 0.2 * random_matrix(n, n, rng);
    s.convection.flat() = 0.2 * random_vector(n * n * n, rng);
    return s;
}

} // namespace

TEST(Assembly, GramIsIdentityForOrthonormalBasis)
{
    Grid1D g(32, 0.0, 1.0);
    ReducedSystem s = assemble_reduced_operators(sine_basis(g, 4), g, 0.01);
    EXPECT_LE((s.gram - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(s.nu, 0.01);
}

TEST(Assembly, ConstantModeHasZeroPeriodicDiffusion)
{
    Grid1D g(10, 0.0, 2.0);
    PodBasis b{Vector::Constant(10, 1.0 / std::sqrt(2.0)), Vector::Ones(1), g.weights()};
    ReducedSystem s = assemble_reduced_operators(b, g, 0.1, Boundary::periodic());
    EXPECT_NEAR(s.diffusion(0, 0), 0.0, 1e-12);
    EXPECT_NEAR(s.convection(0, 0, 0), 0.0, 1e-12);
}

TEST(Assembly, MatchesBruteForceSums)
{
    Grid1D g(16, 0.0, 1.0);
    std::mt19937_64 rng(21);
    Matrix modes = random_matrix(16, 2, rng);
    detail::w_orthonormalize(modes, g.weights());
    PodBasis b{modes, Vector::Ones(2), g.weights()};
    ReducedSystem s = assemble_reduced_operators(b, g, 0.05);
    const double dx = g.dx();
    auto at = [&](Index j, Index c) { return (c < 0 || c >= 16) ? 0.0 : modes(c, j); };
    for (Index i = 0; i < 2; ++i)
        for (Index j = 0; j < 2; ++j) {
            double a = 0.0;
            for (Index c = 0; c < 16; ++c)
                a += dx * modes(c, i) * (at(j, c + 1) - 2.0 * at(j, c) + at(j, c - 1)) / (dx * dx);
            EXPECT_NEAR(s.diffusion(i, j), a, 1e-12 * (1.0 + std::abs(a)));
            for (Index k = 0; k < 2; ++k) {
                double cc = 0.0;
                for (Index c = 0; c < 16; ++c)
                    cc += dx * modes(c, i) * (at(j, c + 1) * at(k, c + 1) - at(j, c - 1) * at(k, c - 1)) / (4.0 * dx);
                EXPECT_NEAR(s.convection(i, j, k), cc, 1e-12 * (1.0 + std::abs(cc)));
            }
        }
}

TEST(Assembly, GridMismatch)
{
    Grid1D g(16, 0.0, 1.0);
    PodBasis b = sine_basis(g, 2);
    EXPECT_THROW(assemble_reduced_operators(b, Grid1D(17, 0.0, 1.0), 0.1), IncompatibleDiscretizationError);
    EXPECT_THROW(assemble_reduced_operators(b, Grid1D(16, 0.0, 2.0), 0.1), IncompatibleDiscretizationError);
}

TEST(Tensor3, ContractionAndJacobian)
{
    std::mt19937_64 rng(22);
    Tensor3 t(3);
    t.flat() = random_vector(27, rng);
    Vector a = random_vector(3, rng);
    Vector brute = Vector::Zero(3);
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j)
            for (Index k = 0; k < 3; ++k) brute[i] += a[j] * t(i, j, k) * a[k];
    EXPECT_LE((t.contract(a) - brute).cwiseAbs().maxCoeff(), 1e-13);
    const double h = 1e-6;
    Matrix jac = t.contract_jacobian(a);
    for (Index l = 0; l < 3; ++l) {
        Vector ap = a, am = a;
        ap[l] += h;
        am[l] -= h;
        EXPECT_LE(((t.contract(ap) - t.contract(am)) / (2 * h) - jac.col(l)).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Correction, PackRoundTrip)
{
    std::mt19937_64 rng(23);
    Matrix d = random_matrix(3, 3, rng);
    Tensor3 c(3);
    c.flat() = random_vector(27, rng);
    CorrectionVector q = CorrectionVector::pack(d, c);
    EXPECT_EQ(q.values.size(), 36);
    EXPECT_EQ(q.values[1], d(0, 1));  // row-major diffusion block
    EXPECT_EQ(q.values[9 + 5], c(0, 1, 2));
    EXPECT_TRUE(q.diffusion() == d);
    EXPECT_TRUE(q.convection().flat() == c.flat());
    CorrectionVector again = CorrectionVector::pack(q.diffusion(), q.convection());
    EXPECT_TRUE(again.values == q.values);
    EXPECT_EQ(correction_size(11), 1452);
    EXPECT_EQ(correction_size(10), 1100);
}

TEST(Integrate, ZeroOperatorsKeepInitialState)
{
    Vector a0(3);
    a0 << 1.0, -0.5, 2.0;
    RomTrajectory tr = integrate_rom(ReducedSystem::zeros(3, 1.0), CorrectionVector::zeros(3), a0,
                                     Vector::LinSpaced(11, 0.0, 1.0));
    for (Index i = 0; i < 11; ++i) EXPECT_TRUE(tr.states.row(i) == a0.transpose());
}

TEST(Integrate, ExponentialDecay)
{
    ReducedSystem s = ReducedSystem::zeros(2, 1.0);
    s.diffusion = -Matrix::Identity(2, 2);
    Vector a0(2);
    a0 << 2.0, -1.0;
    Vector t = Vector::LinSpaced(1001, 0.0, 1.0);
    RomTrajectory tr = integrate_rom(s, CorrectionVector::zeros(2), a0, t);
    double worst = 0.0;
    for (Index i = 0; i < t.size(); ++i)
        for (Index j = 0; j < 2; ++j)
            worst = std::max(worst, std::abs(tr.states(i, j) / (a0[j] * std::exp(-t[i])) - 1.0));
    EXPECT_LE(worst, 1e-5);
}

TEST(Integrate, SecondOrderConvergence)
{
    ReducedSystem s = ReducedSystem::zeros(1, 1.0);
    s.diffusion(0, 0) = -1.0;
    Vector a0 = Vector::Ones(1);
    auto err = [&](Index steps) {
        RomTrajectory tr = integrate_rom(s, CorrectionVector::zeros(1), a0, Vector::LinSpaced(steps + 1, 0.0, 1.0));
        return std::abs(tr.states(steps, 0) - std::exp(-1.0));
    };
    EXPECT_NEAR(err(100) / err(200), 4.0, 0.5);
    EXPECT_NEAR(err(200) / err(400), 4.0, 0.5);
}

TEST(Integrate, CorrectionEntersLinearly)
{
    std::mt19937_64 rng(24);
    ReducedSystem s = random_system(3, rng);
    Vector a0 = 0.5 * random_vector(3, rng);
    Vector t = Vector::LinSpaced(51, 0.0, 1.0);
    RomTrajectory plain = integrate_rom(s, CorrectionVector::zeros(3), a0, t);
    RomTrajectory again = integrate_rom(s, CorrectionVector::zeros(3), a0, t);
    EXPECT_TRUE(plain.states == again.states);

    // Folding the correction into the operators gives the same trajectory.
    CorrectionVector q{3, 0.1 * random_vector(36, rng)};
    ReducedSystem folded = s;
    folded.diffusion += q.diffusion();
    folded.convection.flat() += q.convection().flat();
    Matrix a = integrate_rom(s, q, a0, t).states;
    Matrix b = integrate_rom(folded, CorrectionVector::zeros(3), a0, t).states;
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Integrate, PermutationEquivariance)
{
    std::mt19937_64 rng(25);
    const Index n = 3;
    ReducedSystem s = random_system(n, rng);
    s.gram = Matrix::Identity(n, n) + 0.1 * Matrix::Ones(n, n);
    CorrectionVector q{n, 0.05 * random_vector(correction_size(n), rng)};
    Vector a0 = 0.5 * random_vector(n, rng);
    std::vector<Index> perm{2, 0, 1};

    ReducedSystem ps = s;
    Matrix qd = q.diffusion();
    Tensor3 qc = q.convection(), pqc(n);
    Matrix pqd(n, n);
    Vector pa0(n);
    for (Index i = 0; i < n; ++i) {
        pa0[i] = a0[perm[i]];
        for (Index j = 0; j < n; ++j) {
            ps.gram(i, j) = s.gram(perm[i], perm[j]);
            ps.diffusion(i, j) = s.diffusion(perm[i], perm[j]);
            pqd(i, j) = qd(perm[i], perm[j]);
            for (Index k = 0; k < n; ++k) {
                ps.convection(i, j, k) = s.convection(perm[i], perm[j], perm[k]);
                pqc(i, j, k) = qc(perm[i], perm[j], perm[k]);
            }
        }
    }
    Vector t = Vector::LinSpaced(41, 0.0, 2.0);
    Matrix a = integrate_rom(s, q, a0, t).states;
    Matrix b = integrate_rom(ps, CorrectionVector::pack(pqd, pqc), pa0, t).states;
    for (Index i = 0; i < n; ++i) EXPECT_LE((b.col(i) - a.col(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Integrate, NonUniformGridAndErrors)
{
    ReducedSystem s = ReducedSystem::zeros(1, 1.0);
    s.diffusion(0, 0) = -1.0;
    Vector t(6);
    t << 0.0, 0.001, 0.003, 0.004, 0.0065, 0.01;
    RomTrajectory tr = integrate_rom(s, CorrectionVector::zeros(1), Vector::Ones(1), t);
    EXPECT_NEAR(tr.states(5, 0), std::exp(-0.01), 1e-5);

    Vector bad(3);
    bad << 0.0, 0.2, 0.1;
    EXPECT_THROW(integrate_rom(s, CorrectionVector::zeros(1), Vector::Ones(1), bad), Error);
    EXPECT_THROW(integrate_rom(s, CorrectionVector::zeros(2), Vector::Ones(1), t), DimensionError);

    // a' = -a^2 from a0 = -1 blows up at t = 1.
    ReducedSystem blow = ReducedSystem::zeros(1, 0.0);
    blow.convection(0, 0, 0) = 1.0;
    Vector tt = Vector::LinSpaced(301, 0.0, 3.0);
    bool failed = false;
    try {
        integrate_rom(blow, CorrectionVector::zeros(1), -Vector::Ones(1), tt);
    } catch (const DivergenceError& e) {
        failed = e.step() > 0;
    } catch (const StepFailureError& e) {
        failed = e.step() > 0;
    }
    EXPECT_TRUE(failed);
}

TEST(RelativeError, BasicCases)
{
    std::mt19937_64 rng(26);
    SnapshotMatrix ref{random_matrix(10, 5, rng), Vector::LinSpaced(5, 0.0, 1.0), Vector::Constant(10, 0.1)};
    SnapshotMatrix same = ref;
    EXPECT_EQ(relative_l2_error(ref, same).values.cwiseAbs().maxCoeff(), 0.0);
    SnapshotMatrix zero = ref;
    zero.values.setZero();
    EXPECT_LE((relative_l2_error(ref, zero).values.array() - 1.0).abs().maxCoeff(), 1e-15);
    SnapshotMatrix scaled = ref;
    scaled.values *= 1.1;
    EXPECT_LE((relative_l2_error(ref, scaled).values.array() - 0.1).abs().maxCoeff(), 1e-14);

    SnapshotMatrix with_zero = ref;
    with_zero.values.col(2).setZero();
    ErrorSeries e = relative_l2_error(with_zero, ref);
    ASSERT_EQ(e.undefined.size(), 1u);
    EXPECT_EQ(e.undefined[0], 2);
    EXPECT_TRUE(std::isnan(e.values[2]));

    SnapshotMatrix other_w = ref;
    other_w.weights[0] = 0.2;
    EXPECT_THROW(relative_l2_error(ref, other_w), IncompatibleDiscretizationError);
}
