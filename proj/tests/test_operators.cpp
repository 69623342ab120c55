#include <gtest/gtest.h>

#include <cmath>

#include "obswave/operators.hpp"

using namespace obswave;

namespace {

Vector sample(const Grid& g, double (*f)(double, double)) {
    Vector v(g.size());
    for (int p = 0; p < g.size(); ++p) v[p] = f(g.coords(p)[0], g.coords(p)[1]);
    return v;
}

double sinx(double x, double) { return std::sin(M_PI * x); }
double sinxy(double x, double y) { return std::sin(M_PI * x) * std::sin(2 * M_PI * y); }

double laplacian_error(int nx) {
    const auto g = Grid::line(0, 1, nx, 1, 10);
    Operators ops(g, MetricField::identity(1));
    const Vector z = sample(g, sinx);
    const Vector lz = ops.laplacian * z;
    double err = 0;
    for (int p : ops.interior) err = std::max(err, std::fabs(lz[p] + M_PI * M_PI * z[p]));
    return err;
}

}  // namespace

TEST(Operators, LaplacianSecondOrder) {
    const double e1 = laplacian_error(21), e2 = laplacian_error(41);
    EXPECT_NEAR(e1 / e2, 4.0, 0.1);
}

TEST(Operators, LaplacianIsSymmetricForConstantMetric) {
    const auto g = Grid::square({0, 0}, {1, 1}, {9, 11}, 1, 10);
    MetricField m = MetricField::identity(2);
    m.base = {2.0, 0.3, 1.0};
    Operators ops(g, m);
    const SparseMatrix d = ops.laplacian - SparseMatrix(ops.laplacian.transpose());
    EXPECT_LT(d.norm(), 1e-10 * ops.laplacian.norm());
}

TEST(Operators, VariableMetricDivergenceForm) {
    // b = 1 + x, z = sin(pi x): (b z')' = pi cos(pi x) - pi^2 (1 + x) sin(pi x)
    auto err = [](int nx) {
        const auto g = Grid::line(0, 1, nx, 1, 10);
        MetricField m = MetricField::identity(1);
        m.slope[0][0] = 1.0;
        Operators ops(g, m);
        const Vector lz = ops.laplacian * sample(g, sinx);
        double e = 0;
        for (int p : ops.interior) {
            const double x = g.coords(p)[0];
            e = std::max(e, std::fabs(lz[p] - (M_PI * std::cos(M_PI * x) - M_PI * M_PI * (1 + x) * std::sin(M_PI * x))));
        }
        return e;
    };
    EXPECT_NEAR(err(21) / err(41), 4.0, 0.2);
}

TEST(Operators, TwoDimLaplacianWithCrossTerm) {
    // b = [[1, c], [c, 1]]: L z = z_xx + 2c z_xy + z_yy
    const double c = 0.25;
    auto err = [&](int nx) {
        const auto g = Grid::square({0, 0}, {1, 1}, {nx, nx}, 1, 10);
        MetricField m = MetricField::identity(2);
        m.base[1] = c;
        Operators ops(g, m);
        const Vector lz = ops.laplacian * sample(g, sinxy);
        double e = 0;
        for (int p : ops.interior) {
            const auto x = g.coords(p);
            const double sx = std::sin(M_PI * x[0]), cx = std::cos(M_PI * x[0]);
            const double sy = std::sin(2 * M_PI * x[1]), cy = std::cos(2 * M_PI * x[1]);
            const double exact = -5 * M_PI * M_PI * sx * sy + 2 * c * 2 * M_PI * M_PI * cx * cy;
            e = std::max(e, std::fabs(lz[p] - exact));
        }
        return e;
    };
    EXPECT_NEAR(err(17) / err(33), 4.0, 0.3);
}

TEST(Operators, GradientAndNormalDerivative) {
    const auto g = Grid::line(0, 1, 101, 1, 10);
    Operators ops(g, MetricField::identity(1));
    const Vector gz = ops.gradient[0] * sample(g, sinx);
    EXPECT_NEAR(gz[0], M_PI, 2e-3);
    EXPECT_NEAR(gz[g.size() - 1], -M_PI, 2e-3);
    EXPECT_NEAR(gz[50], 0.0, 1e-12);
}

TEST(Operators, NormsOfStandingWave) {
    const auto g = Grid::line(0, 1, 401, 1, 10);
    Operators ops(g, MetricField::identity(1));
    const Vector z = sample(g, sinx);
    EXPECT_NEAR(ops.h1_seminorm2(z), M_PI * M_PI / 2, 1e-4);
    EXPECT_NEAR(ops.l2_norm2(z), 0.5, 1e-10);
}

TEST(Operators, StiffnessIsPositiveDefiniteOnInterior) {
    const auto g = Grid::square({0, 0}, {1, 1}, {7, 7}, 1, 10);
    Operators ops(g, MetricField::identity(2));
    Eigen::MatrixXd K(ops.interior.size(), ops.interior.size());
    const Eigen::MatrixXd full = Eigen::MatrixXd(ops.stiffness);
    for (std::size_t i = 0; i < ops.interior.size(); ++i)
        for (std::size_t j = 0; j < ops.interior.size(); ++j) K(i, j) = full(ops.interior[i], ops.interior[j]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}
