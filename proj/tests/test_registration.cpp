#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bsreg/registration.hpp"
#include "bsreg/synthetic.hpp"
#include "oracles.hpp"

using namespace bsreg;

namespace {

Volume blobs(int n, double h, std::uint64_t seed) { return make_phantom(PhantomKind::blobs, {n, n, n}, {h, h, h}, seed); }

}  // namespace

TEST_CASE("mse of identical and shifted images")
{
    const Volume m = blobs(16, 2.0, 3);
    const GridGeometry g = grid_for_volume(m, {8, 8, 8});
    const auto same = mse_cost_grad(m, m, ControlPointGrid(g));
    // Interpolating at the voxel centres leaves only rounding residue.
    CHECK(same.value <= 1e-20);
    CHECK(same.samples == m.voxel_count());
    for (const auto& lat : same.gradient)
        for (double v : lat) CHECK(std::abs(v) <= 1e-14);

    // A linear ramp shifted by a constant displacement differs by a constant.
    const Volume ramp = make_phantom(PhantomKind::gradient, {12, 12, 12}, {1, 1, 1}, 0);
    ControlPointGrid shift(grid_for_volume(ramp, {4, 4, 4}));
    for (double& v : shift.coefficients[0]) v = 1.0;
    const auto c = mse_cost_grad(ramp, ramp, shift);
    // Samples with x + 1 beyond the last voxel are skipped.
    CHECK(c.samples == 11u * 12 * 12);
    CHECK(c.value == doctest::Approx(1.0 * c.samples).epsilon(1e-12));
}

TEST_CASE("mse gradient matches finite differences")
{
    const Volume fixed = blobs(18, 2.0, 4);
    const Volume moving = blobs(18, 2.0, 5);
    const GridGeometry g = grid_for_volume(fixed, {9, 9, 9});
    ControlPointGrid grid = random_grid(g, 0.7, 60);
    const auto base = mse_cost_grad(fixed, moving, grid, 2);
    double scale = 0.0;
    for (const auto& lat : base.gradient)
        for (double v : lat) scale = std::max(scale, std::abs(v));
    REQUIRE(scale > 0.0);

    std::mt19937_64 rng(61);
    const std::size_t per = grid.coefficients[0].size();
    int bad = 0;
    for (int t = 0; t < 50; ++t) {
        const int comp = static_cast<int>(rng() % 3);
        const std::size_t idx = rng() % per;
        const double h = 1e-6;
        const double keep = grid.coefficients[comp][idx];
        grid.coefficients[comp][idx] = keep + h;
        const double fp = mse_cost_grad(fixed, moving, grid).value;
        grid.coefficients[comp][idx] = keep - h;
        const double fm = mse_cost_grad(fixed, moving, grid).value;
        grid.coefficients[comp][idx] = keep;
        const double fd = (fp - fm) / (2 * h);
        // A perturbation can push a sample across a voxel face, where the
        // interpolant has a kink; tolerate a rare miss.
        if (std::abs(fd - base.gradient[comp][idx]) > 1e-4 * scale) ++bad;
    }
    CHECK(bad <= 1);
}

TEST_CASE("mse is independent of thread count")
{
    const Volume fixed = blobs(14, 2.0, 6);
    const Volume moving = blobs(14, 2.0, 7);
    const ControlPointGrid grid = random_grid(grid_for_volume(fixed, {8, 8, 8}), 1.0, 62);
    const auto a = mse_cost_grad(fixed, moving, grid, 1);
    const auto b = mse_cost_grad(fixed, moving, grid, 3);
    CHECK(std::abs(a.value - b.value) <= 1e-12 * a.value);
    CHECK(a.samples == b.samples);
}

TEST_CASE("grid covering a volume")
{
    const Volume v({10, 7, 5}, {2, 3, 1.5}, {-4, 1, 0}, 1);
    const GridGeometry g = grid_for_volume(v, {5, 5, 5});
    CHECK(g.origin() == v.origin());
    CHECK(g.tiles() == Index3{4, 4, 2});
    CHECK(g.upper()[0] >= v.upper()[0]);
}

TEST_CASE("field transfer")
{
    const GridGeometry coarse({2, 2, 2}, {12, 12, 12}, {0, 0, 0});
    const ControlPointGrid src = random_grid(coarse, 1.5, 63);

    // Halving the spacing: the coarse field is exactly representable.
    const GridGeometry fine({4, 4, 4}, {6, 6, 6}, {0, 0, 0});
    const ControlPointGrid dst = transfer_field(src, fine);
    std::mt19937_64 rng(64);
    std::uniform_real_distribution<double> u(0.0, 24.0);
    for (int t = 0; t < 200; ++t) {
        const Vec3 x{u(rng), u(rng), u(rng)};
        const Vec3 a = eval_displacement(src, x);
        const Vec3 b = eval_displacement(dst, x);
        for (int d = 0; d < 3; ++d) CHECK(std::abs(a[d] - b[d]) <= 1e-9);
    }

    // Same geometry: coefficients survive.
    const ControlPointGrid same = transfer_field(src, coarse);
    for (int d = 0; d < 3; ++d)
        for (std::size_t i = 0; i < src.coefficients[d].size(); ++i)
            CHECK(std::abs(same.coefficients[d][i] - src.coefficients[d][i]) <= 1e-9);

    // A polynomial of degree 3 on a non-nested grid is also reproduced.
    ControlPointGrid poly(coarse);
    std::mt19937_64 prng(65);
    const oracle::Poly3 p = oracle::Poly3::random(prng);
    oracle::set_polynomial(poly, 1, p);
    const ControlPointGrid other = transfer_field(poly, GridGeometry({3, 3, 3}, {8, 8, 8}, {0, 0, 0}));
    for (int t = 0; t < 100; ++t) {
        const Vec3 x{u(rng), u(rng), u(rng)};
        CHECK(std::abs(eval_displacement(other, x)[1] - p.eval(x)) <= 1e-8 * (1 + std::abs(p.eval(x))));
    }
}

TEST_CASE("pack and unpack")
{
    const ControlPointGrid g = random_grid(GridGeometry({2, 1, 3}, {5, 5, 5}, {0, 0, 0}), 1.0, 66);
    const auto x = pack(g.coefficients);
    CHECK(x.size() == 3 * g.coefficients[0].size());
    CHECK(x[g.coefficients[0].size()] == g.coefficients[1][0]);
    CoefficientLattices back = zero_lattices(g.geometry);
    unpack(x, back);
    CHECK(back == g.coefficients);
    CHECK_THROWS_AS(unpack(std::vector<double>(3), back), std::invalid_argument);
}

TEST_CASE("lbfgs minimizes smooth test functions")
{
    // Ill-conditioned quadratic.
    const Objective quad = [](const std::vector<double>& x, std::vector<double>& g) {
        double f = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double a = std::pow(10.0, static_cast<double>(i) / 3.0);
            f += 0.5 * a * (x[i] - 1) * (x[i] - 1);
            g[i] = a * (x[i] - 1);
        }
        return f;
    };
    LbfgsSettings s;
    s.max_iterations = 200;
    s.gradient_tolerance = 1e-9;
    const auto q = minimize_lbfgs(quad, std::vector<double>(10, 0.0), s);
    CHECK(q.stop_reason == "gradient_tolerance");
    for (double v : q.x) CHECK(v == doctest::Approx(1.0).epsilon(1e-8));
    for (std::size_t i = 1; i < q.history.size(); ++i) CHECK(q.history[i] <= q.history[i - 1]);
    CHECK(q.history.size() == static_cast<std::size_t>(q.iterations) + 1);

    const Objective rosen = [](const std::vector<double>& x, std::vector<double>& g) {
        const double a = 1 - x[0], b = x[1] - x[0] * x[0];
        g[0] = -2 * a - 400 * x[0] * b;
        g[1] = 200 * b;
        return a * a + 100 * b * b;
    };
    s.max_iterations = 500;
    const auto r = minimize_lbfgs(rosen, {-1.2, 1.0}, s);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-6));
    for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i] <= r.history[i - 1]);

    s.max_iterations = 3;
    CHECK(minimize_lbfgs(rosen, {-1.2, 1.0}, s).stop_reason == "max_iterations");

    const Objective nan = [](const std::vector<double>&, std::vector<double>&) { return std::nan(""); };
    CHECK_THROWS_AS(minimize_lbfgs(nan, {0.0}, s), NumericalError);
}

TEST_CASE("registration config validation")
{
    RegistrationConfig c;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.stages = {{{8, 8, 8}, 10, 1}};
    CHECK_NOTHROW(c.validate());
    c.stages = {{{8, 8, 8}, 10, 1}, {{16, 16, 16}, 10, 1}};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.stages = {{{8, 8, 8}, 10, 0}};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.stages = {{{8, 0, 8}, 10, 1}};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.stages = {{{8, 8, 8}, -1, 1}};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.stages = {{{8, 8, 8}, 10, 1}};
    c.weights.mu[2] = -1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.weights = {};
    c.threads = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("registering an image to itself leaves the field at zero")
{
    const Volume m = blobs(16, 2.0, 8);
    RegistrationConfig c;
    c.stages = {{{8, 8, 8}, 10, 1}};
    c.weights = RegularizerWeights::only(Regularizer::curvature, 1e-2);
    const auto r = optimize(m, m, c);
    for (const auto& lat : r.grid.coefficients)
        for (double v : lat) CHECK(std::abs(v) <= 1e-12);
    REQUIRE(r.stages.size() == 1u);
    CHECK(r.stages[0].stop_reason == "gradient_tolerance");
    CHECK(r.stages[0].final_cost <= 1e-20);
}

TEST_CASE("registration recovers a smooth deformation")
{
    const Volume moving = blobs(32, 2.0, 9);
    const GridGeometry gg = grid_for_volume(moving, {8, 8, 8});
    const auto gt = make_ground_truth_field(gg, 2.5, 40.0, 10, 200, 8.0);
    const Volume fixed = warp_volume(moving, gt.field, moving, 0.0);

    RegistrationConfig c;
    c.stages = {{{16, 16, 16}, 30, 2}, {{8, 8, 8}, 30, 1}};
    c.weights = RegularizerWeights::only(Regularizer::curvature, 1e-2);
    const auto r = optimize(fixed, moving, c);
    REQUIRE(r.stages.size() == 2u);
    CHECK(r.stages[1].geometry.tiles() == gg.tiles());
    for (const auto& s : r.stages) {
        CHECK(s.final_cost <= s.initial_cost);
        CHECK(s.final_cost == doctest::Approx(s.final_mse + s.final_penalty).epsilon(1e-12));
    }
    for (std::size_t i = 1; i < r.history.size(); ++i)
        if (r.history[i].stage == r.history[i - 1].stage) CHECK(r.history[i].cost <= r.history[i - 1].cost);

    const double before = mls(gt.fixed, gt.moving);
    const double after = registration_mls(r.grid, gt.fixed, gt.moving).mls;
    CHECK(after < 0.6 * before);
    CHECK(jacobian_map(r.grid, moving).min > 0.0);
}

TEST_CASE("a heavy curvature weight flattens the field")
{
    const Volume moving = blobs(24, 2.0, 11);
    const GridGeometry gg = grid_for_volume(moving, {8, 8, 8});
    const Volume fixed = warp_volume(moving, make_ground_truth_field(gg, 2.0, 40.0, 12, 0).field, moving, 0.0);
    RegistrationConfig c;
    c.stages = {{{8, 8, 8}, 30, 1}};
    c.weights = RegularizerWeights::only(Regularizer::curvature, 1e6);
    const auto r = optimize(fixed, moving, c);
    const VMatrixBank bank(gg.spacing());
    const auto p = penalty(r.grid, RegularizerWeights::only(Regularizer::curvature), bank);
    c.weights = {};
    const auto free = optimize(fixed, moving, c);
    const auto pf = penalty(free.grid, RegularizerWeights::only(Regularizer::curvature), bank);
    CHECK(p.terms[1] < 1e-3 * pf.terms[1]);
}

TEST_CASE("total gradient is the sum of similarity and penalty gradients")
{
    const Volume fixed = blobs(16, 2.0, 13);
    const Volume moving = blobs(16, 2.0, 14);
    const ControlPointGrid grid = random_grid(grid_for_volume(fixed, {8, 8, 8}), 0.5, 67);
    const auto w = RegularizerWeights::all(0.1);
    const VMatrixBank bank(grid.geometry.spacing());
    const auto m = mse_cost_grad(fixed, moving, grid);
    const auto p = penalty(grid, w, bank);
    ControlPointGrid probe = grid;
    const double h = 1e-6;
    for (int comp = 0; comp < 3; ++comp) {
        const std::size_t idx = 7 + 5 * comp;
        probe.coefficients[comp][idx] += h;
        const double fp = mse_cost_grad(fixed, moving, probe).value + penalty(probe, w, bank).value;
        probe.coefficients[comp][idx] -= 2 * h;
        const double fm = mse_cost_grad(fixed, moving, probe).value + penalty(probe, w, bank).value;
        probe.coefficients[comp][idx] += h;
        const double total = m.gradient[comp][idx] + p.gradient[comp][idx];
        CHECK(std::abs((fp - fm) / (2 * h) - total) <= 1e-4 * (1 + std::abs(total)));
    }
}
