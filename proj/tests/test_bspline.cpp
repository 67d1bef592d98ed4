#include <doctest.h>

#include <random>
#include <sstream>

#include "bsreg/bspline.hpp"
#include "bsreg/synthetic.hpp"
#include "oracles.hpp"

using namespace bsreg;

TEST_CASE("basis values at known points")
{
    CHECK(eval_basis(0.0, 0, 0) == doctest::Approx(1.0 / 6).epsilon(1e-15));
    CHECK(eval_basis(0.5, 1, 0) == doctest::Approx(2.875 / 6).epsilon(1e-15));

    const double h = 1e-5;
    const double fd = (eval_basis(0.3 + h, 2, 0) - eval_basis(0.3 - h, 2, 0)) / (2 * h);
    CHECK(std::abs(eval_basis(0.3, 2, 1) - fd) < 1e-8);
}

TEST_CASE("basis matches hand-written pieces for every order")
{
    for (int l = 0; l < 4; ++l)
        for (int k = 0; k < 4; ++k)
            for (double u = 0.0; u <= 1.0; u += 0.0625) CHECK(eval_basis(u, l, k) == doctest::Approx(oracle::beta(u, l, k)).epsilon(1e-14));
}

TEST_CASE("basis rejects bad arguments")
{
    CHECK_THROWS_AS(eval_basis(-0.01, 0, 0), std::domain_error);
    CHECK_THROWS_AS(eval_basis(1.01, 0, 0), std::domain_error);
    CHECK_THROWS_AS(eval_basis(0.5, 4, 0), std::domain_error);
    CHECK_THROWS_AS(eval_basis(0.5, 0, 4), std::domain_error);
    CHECK_THROWS_AS(build_q(0.0, 0), std::domain_error);
    CHECK_THROWS_AS(build_q(-1.0, 1), std::domain_error);
    CHECK_THROWS_AS(build_q(1e-7, 1), std::domain_error);
}

TEST_CASE("partition of unity")
{
    for (int i = 0; i <= 1000; ++i) {
        const double u = i / 1000.0;
        double s = 0.0;
        for (int l = 0; l < 4; ++l) s += eval_basis(u, l, 0);
        CHECK(std::abs(s - 1.0) <= 1e-14);
    }
}

TEST_CASE("Q matrices")
{
    const auto w0 = build_q(1.0, 0).apply(0.0);
    CHECK(w0[0] == doctest::Approx(1.0 / 6));
    CHECK(w0[1] == doctest::Approx(4.0 / 6));
    CHECK(w0[2] == doctest::Approx(1.0 / 6));
    CHECK(w0[3] == 0.0);

    const auto w1 = build_q(1.0, 1).apply(0.0);
    CHECK(w1[0] == doctest::Approx(-0.5));
    CHECK(std::abs(w1[1]) < 1e-15);
    CHECK(w1[2] == doctest::Approx(0.5));
    CHECK(std::abs(w1[3]) < 1e-15);

    const auto w2 = build_q(2.0, 1).apply(0.0);
    for (int l = 0; l < 4; ++l) CHECK(w2[l] == doctest::Approx(0.5 * w1[l]));

    SUBCASE("derivative rows match central differences with second-order convergence")
    {
        const double r = 7.0;
        for (int k = 1; k <= 3; ++k) {
            const QMatrix lower = build_q(r, k - 1);
            const QMatrix q = build_q(r, k);
            const double x = 2.3;
            double prev = 0.0;
            for (double h : {1e-1, 5e-2}) {
                double err = 0.0;
                for (int l = 0; l < 4; ++l) {
                    const double fd = (lower.apply(x + h)[l] - lower.apply(x - h)[l]) / (2 * h);
                    err = std::max(err, std::abs(fd - q.apply(x)[l]));
                }
                if (prev > 0.0 && err > 1e-13) CHECK(prev / err == doctest::Approx(4.0).epsilon(0.05));
                prev = err;
            }
        }
    }
}

TEST_CASE("locate")
{
    const GridGeometry g({3, 3, 3}, {10, 10, 10}, {0, 0, 0});
    auto loc = locate(g, {15, 0, 29.9});
    CHECK(loc.tile == Index3{1, 0, 2});
    CHECK(loc.u[0] == doctest::Approx(0.5));
    CHECK(loc.u[1] == 0.0);
    CHECK(loc.u[2] == doctest::Approx(0.99));

    loc = locate(g, {30, 30, 30});
    CHECK(loc.tile == Index3{2, 2, 2});
    CHECK(loc.u == Vec3{1.0, 1.0, 1.0});

    loc = locate(g, {0, 0, 0});
    CHECK(loc.tile == Index3{0, 0, 0});
    CHECK(loc.u == Vec3{0.0, 0.0, 0.0});

    CHECK_THROWS_AS(locate(g, {-0.1, 0, 0}), OutOfDomain);
    CHECK_THROWS_AS(locate(g, {0, 30.1, 0}), OutOfDomain);
}

TEST_CASE("geometry validation")
{
    CHECK_THROWS_AS(GridGeometry({0, 1, 1}, {1, 1, 1}, {0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(GridGeometry({1, 1, 1}, {1, 0, 1}, {0, 0, 0}), std::domain_error);
    const GridGeometry g({2, 3, 4}, {1, 2, 3}, {5, 6, 7});
    CHECK(g.lattice_dims() == Index3{5, 6, 7});
    CHECK(g.tile_count() == 24u);
    CHECK(g.upper() == Vec3{7, 12, 19});
    for (std::size_t t = 0; t < g.tile_count(); ++t) CHECK(g.tile_linear_index(g.tile_from_linear(t)) == t);
}

TEST_CASE("displacement of simple fields")
{
    const GridGeometry g({3, 2, 4}, {4, 5, 6}, {-3, 1, 2});
    ControlPointGrid grid(g);
    const Vec3 x{1.7, 3.3, 12.1};
    CHECK(eval_displacement(grid, x) == Vec3{0, 0, 0});
    CHECK(eval_partial(grid, x, 1, {1, 1, 1}) == 0.0);

    for (double& v : grid.coefficients[0]) v = 2.5;
    std::mt19937_64 rng(1);
    for (int n = 0; n < 50; ++n) {
        Vec3 p;
        for (int d = 0; d < 3; ++d) p[d] = std::uniform_real_distribution<double>(g.origin()[d], g.upper()[d])(rng);
        const Vec3 v = eval_displacement(grid, p);
        CHECK(v[0] == doctest::Approx(2.5).epsilon(1e-14));
        CHECK(v[1] == 0.0);
        CHECK(v[2] == 0.0);
    }
    CHECK_THROWS_AS(eval_displacement(grid, {100, 0, 0}), OutOfDomain);
}

TEST_CASE("linear reproduction")
{
    const GridGeometry g({4, 3, 3}, {10, 8, 12}, {-5, 0, 3});
    ControlPointGrid grid(g);
    const double a = 0.37;
    oracle::set_linear(grid, 0, 0, a);
    std::mt19937_64 rng(2);
    for (int n = 0; n < 200; ++n) {
        Vec3 p;
        for (int d = 0; d < 3; ++d) p[d] = std::uniform_real_distribution<double>(g.origin()[d], g.upper()[d])(rng);
        CHECK(std::abs(eval_displacement(grid, p)[0] - a * p[0]) <= 1e-10);
        CHECK(eval_partial(grid, p, 0, {1, 0, 0}) == doctest::Approx(a).epsilon(1e-12));
        CHECK(std::abs(eval_partial(grid, p, 0, {2, 0, 0})) < 1e-12);
        CHECK(std::abs(eval_partial(grid, p, 0, {0, 1, 0})) < 1e-12);
    }
}

TEST_CASE("polynomial reproduction up to cubic")
{
    const GridGeometry g({3, 4, 3}, {3, 2.5, 4}, {1, -2, 0.5});
    std::mt19937_64 rng(3);
    ControlPointGrid grid(g);
    oracle::Poly3 polys[3];
    for (int c = 0; c < 3; ++c) {
        polys[c] = oracle::Poly3::random(rng, 0.1);
        oracle::set_polynomial(grid, c, polys[c]);
    }
    for (int n = 0; n < 100; ++n) {
        Vec3 p;
        for (int d = 0; d < 3; ++d) p[d] = std::uniform_real_distribution<double>(g.origin()[d], g.upper()[d])(rng);
        for (int c = 0; c < 3; ++c) {
            for (MultiIndex m : {MultiIndex{0, 0, 0}, MultiIndex{1, 0, 0}, MultiIndex{0, 1, 1}, MultiIndex{2, 0, 1},
                                 MultiIndex{0, 3, 0}, MultiIndex{1, 1, 1}}) {
                const double want = polys[c].eval(p, m);
                const double got = eval_partial(grid, p, c, m);
                CHECK(std::abs(got - want) <= 1e-9 * std::max(1.0, std::abs(want)));
            }
        }
    }
}

TEST_CASE("partials match finite differences of the displacement")
{
    const GridGeometry g({3, 3, 3}, {9, 11, 7}, {0, 0, 0});
    const ControlPointGrid grid = random_grid(g, 2.0, 5);
    std::mt19937_64 rng(6);
    for (int n = 0; n < 50; ++n) {
        Vec3 p;
        for (int d = 0; d < 3; ++d) p[d] = std::uniform_real_distribution<double>(0.2, 0.8)(rng) * g.upper()[d];
        for (int c = 0; c < 3; ++c)
            for (int axis = 0; axis < 3; ++axis) {
                const double h = 1e-3 * g.spacing()[axis];
                Vec3 a = p, b = p;
                a[axis] += h;
                b[axis] -= h;
                const double fd = (eval_displacement(grid, a)[c] - eval_displacement(grid, b)[c]) / (2 * h);
                MultiIndex m{0, 0, 0};
                m[axis] = 1;
                const double exact = eval_partial(grid, p, c, m);
                CHECK(std::abs(fd - exact) <= 1e-5 * std::max(std::abs(exact), 1e-2));
            }
    }
}

TEST_CASE("matrix path equals direct summation")
{
    const GridGeometry g({4, 3, 5}, {6, 7, 5}, {1, 2, 3});
    const ControlPointGrid grid = random_grid(g, 3.0, 7);
    const QTable table(g.spacing());
    std::mt19937_64 rng(8);
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
        Vec3 p;
        for (int d = 0; d < 3; ++d) p[d] = std::uniform_real_distribution<double>(g.origin()[d], g.upper()[d])(rng);
        const Vec3 a = eval_displacement(grid, table, p);
        const Vec3 b = oracle::displacement(grid, p);
        for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(a[c] - b[c]) / std::max(std::abs(b[c]), 1e-3));
        const MultiIndex m{1, 0, 2};
        const double dp = eval_partial(grid, p, 2, m);
        const double dq = oracle::partial(grid, p, 2, m);
        worst = std::max(worst, std::abs(dp - dq) / std::max(std::abs(dq), 1e-3));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("gradient matrix matches partials")
{
    const GridGeometry g({2, 2, 2}, {5, 5, 5}, {0, 0, 0});
    const ControlPointGrid grid = random_grid(g, 1.0, 9);
    const QTable table(g.spacing());
    const Vec3 p{3.1, 7.7, 4.2};
    const Mat3 J = eval_gradient(grid, table, p);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            MultiIndex m{0, 0, 0};
            m[j] = 1;
            CHECK(J[i][j] == doctest::Approx(oracle::partial(grid, p, i, m)).epsilon(1e-12));
        }
}

TEST_CASE("locality of one coefficient")
{
    const GridGeometry g({6, 6, 6}, {4, 4, 4}, {0, 0, 0});
    ControlPointGrid grid(g);
    const Index3 k{3, 4, 2};
    grid.at(1, k[0], k[1], k[2]) = 1.0;
    // Support covers tiles k-3..k, i.e. physical [(k-3) r, (k+1) r].
    std::mt19937_64 rng(10);
    for (int n = 0; n < 2000; ++n) {
        Vec3 p;
        for (int d = 0; d < 3; ++d) p[d] = std::uniform_real_distribution<double>(0, 24)(rng);
        bool inside = true;
        for (int d = 0; d < 3; ++d) inside = inside && p[d] > (k[d] - 3) * 4.0 && p[d] < (k[d] + 1) * 4.0;
        const double v = eval_displacement(grid, p)[1];
        if (!inside) CHECK(v == 0.0);
        else CHECK(v > 0.0);
    }
}

TEST_CASE("partial rejects bad multi-indices")
{
    const ControlPointGrid grid(GridGeometry({1, 1, 1}, {1, 1, 1}, {0, 0, 0}));
    CHECK_THROWS_AS(eval_partial(grid, {0.5, 0.5, 0.5}, 0, {2, 2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(eval_partial(grid, {0.5, 0.5, 0.5}, 0, {-1, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(eval_partial(grid, {0.5, 0.5, 0.5}, 3, {0, 0, 0}), std::invalid_argument);
}

TEST_CASE("tile coefficients layout")
{
    const GridGeometry g({3, 3, 3}, {1, 1, 1}, {0, 0, 0});
    ControlPointGrid grid(g);
    for (auto& lat : grid.coefficients)
        for (double& v : lat) v = 4.0;
    for (const auto& p : tile_coefficients(grid, {1, 2, 0}))
        for (double v : p) CHECK(v == 4.0);

    ControlPointGrid one(g);
    one.at(0, 0, 0, 0) = 7.0;
    const auto p = tile_coefficients(one, {0, 0, 0})[0];
    int count = 0;
    for (double v : p) count += v != 0.0;
    CHECK(count == 1);
    CHECK(p[0] == 7.0);

    // 16*l + 4*m + n ordering: entry (l,m,n) = lattice (t+l, t+m, t+n).
    ControlPointGrid ramp(g);
    const Index3 n = g.lattice_dims();
    for (int i = 0; i < n[0]; ++i)
        for (int j = 0; j < n[1]; ++j)
            for (int k = 0; k < n[2]; ++k) ramp.at(2, i, j, k) = 100 * i + 10 * j + k;
    const auto q = tile_coefficients(ramp, {1, 0, 2})[2];
    for (int l = 0; l < 4; ++l)
        for (int m = 0; m < 4; ++m)
            for (int k = 0; k < 4; ++k) CHECK(q[tile_offset(l, m, k)] == 100 * (1 + l) + 10 * m + (2 + k));

    // Neighbouring tiles share a 4x4x3 block.
    const auto a = tile_coefficients(ramp, {0, 0, 0})[2];
    const auto b = tile_coefficients(ramp, {1, 0, 0})[2];
    int shared = 0;
    for (double x : a)
        for (double y : b) shared += x == y;
    CHECK(shared == 48);
    CHECK_THROWS_AS(tile_coefficients(ramp, {3, 0, 0}), std::out_of_range);
}

TEST_CASE("BSPG1 round trip and errors")
{
    const GridGeometry g({2, 3, 1}, {1.25, 0.1, 3.0}, {-1.5, 2.0 / 3.0, 1e-3});
    const ControlPointGrid grid = random_grid(g, 5.0, 11);
    std::stringstream ss;
    write_grid(grid, ss);
    const std::string bytes = ss.str();
    std::istringstream in(bytes);
    const ControlPointGrid back = read_grid(in);
    CHECK(back.geometry == grid.geometry);
    CHECK(back.coefficients == grid.coefficients);

    std::istringstream truncated(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(read_grid(truncated), FormatError);
    std::istringstream bad("BSPG2\n");
    CHECK_THROWS_AS(read_grid(bad), FormatError);
    std::istringstream zero_tiles("BSPG1\ntiles 0 1 1\nspacing 1 1 1\norigin 0 0 0\n");
    CHECK_THROWS_AS(read_grid(zero_tiles), FormatError);
    CHECK_THROWS_AS(read_grid(std::string("/nonexistent/file.bspg")), FormatError);

    ControlPointGrid nan_grid = grid;
    nan_grid.coefficients[1][3] = std::nan("");
    CHECK_THROWS_AS(nan_grid.check_finite(), NumericalError);
    std::stringstream ns;
    write_grid(nan_grid, ns);
    CHECK_THROWS_AS(read_grid(ns), FormatError);
}
