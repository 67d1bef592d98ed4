#include <doctest.h>

#include <cstring>
#include <sstream>

#include "bsreg/synthetic.hpp"
#include "bsreg/volume.hpp"
#include "oracles.hpp"

using namespace bsreg;

TEST_CASE("volume construction")
{
    const Volume v({2, 3, 4}, {1, 2, 3}, {0, 0, 0}, 3);
    CHECK(v.voxel_count() == 24u);
    CHECK(v.data().size() == 72u);
    CHECK(v.upper() == Vec3{1, 4, 9});
    CHECK_THROWS_AS(Volume({0, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(Volume({1, 1, 1}, {1, -1, 1}, {0, 0, 0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(Volume({1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 2), std::invalid_argument);
}

TEST_CASE("VOL1 round trip")
{
    Volume v({2, 2, 2}, {0.92, 0.92, 2.5}, {-3.25, 1.0 / 3.0, 7}, 1);
    for (std::size_t i = 0; i < v.data().size(); ++i) v.data()[i] = static_cast<float>(0.1 * i - 0.35);
    std::stringstream ss;
    write_volume(v, ss);
    const std::string bytes = ss.str();
    std::istringstream in(bytes);
    const Volume back = read_volume(in);
    CHECK(back.dims() == v.dims());
    CHECK(back.spacing() == v.spacing());
    CHECK(back.origin() == v.origin());
    CHECK(back.data() == v.data());

    std::stringstream again;
    write_volume(back, again);
    CHECK(again.str() == bytes);

    const Volume vec = make_phantom(PhantomKind::blobs, {3, 4, 5}, {1, 1, 1}, 3);
    Volume field({3, 4, 5}, {1, 1, 1}, {0, 0, 0}, 3);
    for (std::size_t i = 0; i < field.data().size(); ++i) field.data()[i] = static_cast<float>(vec.data()[i / 3] * (i % 3));
    std::stringstream fs;
    write_volume(field, fs);
    const Volume fb = read_volume(fs);
    CHECK(fb.components() == 3);
    CHECK(fb.data() == field.data());
}

TEST_CASE("VOL1 errors")
{
    Volume v({2, 2, 2}, {1, 1, 1}, {0, 0, 0}, 1);
    std::stringstream ss;
    write_volume(v, ss);
    const std::string bytes = ss.str();
    std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_volume(truncated), FormatError);

    std::istringstream magic("VOL2\n");
    CHECK_THROWS_AS(read_volume(magic), FormatError);
    std::istringstream type("VOL1\ndims 1 1 1\nspacing 1 1 1\norigin 0 0 0\ntype int16\ncomponents 1\n");
    CHECK_THROWS_AS(read_volume(type), FormatError);
    std::istringstream dims("VOL1\ndims 0 1 1\nspacing 1 1 1\norigin 0 0 0\ntype float32\ncomponents 1\n");
    CHECK_THROWS_AS(read_volume(dims), FormatError);
    std::istringstream missing("VOL1\ndims 1 1\n");
    CHECK_THROWS_AS(read_volume(missing), FormatError);
    CHECK_THROWS_AS(read_volume(std::string("/nonexistent/v.vol")), FormatError);

    std::string f64 = "VOL1\ndims 1 1 2\nspacing 1 1 1\norigin 0 0 0\ntype float64\ncomponents 1\n";
    const double vals[2] = {1.5, -0.25};
    f64.append(reinterpret_cast<const char*>(vals), sizeof vals);
    std::istringstream f64in(f64);
    const Volume r = read_volume(f64in);
    CHECK(r.data() == std::vector<double>{1.5, -0.25});
}

TEST_CASE("phantoms")
{
    const Volume a = make_phantom(PhantomKind::blobs, {16, 16, 16}, {2, 2, 2}, 7);
    const Volume b = make_phantom(PhantomKind::blobs, {16, 16, 16}, {2, 2, 2}, 7);
    CHECK(a.data() == b.data());
    const Volume c = make_phantom(PhantomKind::blobs, {16, 16, 16}, {2, 2, 2}, 8);
    CHECK(a.data() != c.data());
    double mean = 0.0, var = 0.0;
    for (double v : a.data()) {
        CHECK(std::isfinite(v));
        mean += v;
    }
    mean /= a.data().size();
    for (double v : a.data()) var += (v - mean) * (v - mean);
    CHECK(var > 0.0);

    const Volume g = make_phantom(PhantomKind::gradient, {5, 3, 2}, {1.5, 1, 1}, 0, {10, 0, 0});
    for (int i = 0; i < 5; ++i) CHECK(g.at(i, 2, 1) == doctest::Approx(10 + 1.5 * i));

    const Volume k = make_phantom(PhantomKind::checker, {16, 16, 16}, {1, 1, 1}, 0);
    CHECK(k.at(0, 0, 0) != k.at(8, 0, 0));
    CHECK(k.at(0, 0, 0) == k.at(7, 7, 7));
    CHECK(parse_phantom_kind("checker") == PhantomKind::checker);
    CHECK_THROWS_AS(parse_phantom_kind("donut"), std::invalid_argument);
}

TEST_CASE("trilinear sampling")
{
    const Volume g = make_phantom(PhantomKind::gradient, {6, 5, 4}, {2, 1, 3}, 0, {1, 1, 1});
    double v = 0.0;
    Vec3 grad{};
    REQUIRE(sample_trilinear(g, {4.3, 2.2, 5.9}, v, grad));
    CHECK(v == doctest::Approx(4.3));
    CHECK(grad[0] == doctest::Approx(1.0));
    CHECK(grad[1] == doctest::Approx(0.0));
    CHECK_FALSE(sample_trilinear(g, {0.5, 2, 2}, v));
    CHECK(sample_trilinear(g, g.upper(), v));
    CHECK(v == doctest::Approx(11.0));

    // Gradient is the derivative of the interpolant inside a cell.
    const Volume b = make_phantom(PhantomKind::blobs, {8, 8, 8}, {1.5, 2, 1}, 3);
    const Vec3 x{4.1, 6.3, 3.7};
    REQUIRE(sample_trilinear(b, x, v, grad));
    for (int d = 0; d < 3; ++d) {
        const double h = 1e-6;
        Vec3 a = x, c = x;
        a[d] += h;
        c[d] -= h;
        double va, vc;
        sample_trilinear(b, a, va);
        sample_trilinear(b, c, vc);
        CHECK(grad[d] == doctest::Approx((va - vc) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("downsampling")
{
    Volume v({4, 4, 2}, {1, 1, 2}, {0, 0, 0}, 1);
    for (std::size_t i = 0; i < v.data().size(); ++i) v.data()[i] = static_cast<double>(i);
    const Volume d = downsample(v, 2);
    CHECK(d.dims() == Index3{2, 2, 1});
    CHECK(d.spacing() == Vec3{2, 2, 4});
    CHECK(d.origin() == Vec3{0.5, 0.5, 1});
    double s = 0.0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) s += v.at(a, b, c);
    CHECK(d.at(0, 0, 0) == doctest::Approx(s / 8));
    CHECK(downsample(v, 1).data() == v.data());
    CHECK_THROWS_AS(downsample(v, 0), std::invalid_argument);
}

TEST_CASE("warping a volume")
{
    const Volume m = make_phantom(PhantomKind::gradient, {12, 12, 12}, {1, 1, 1}, 0);
    ControlPointGrid grid(GridGeometry({3, 3, 3}, {11.0 / 3, 11.0 / 3, 11.0 / 3}, {0, 0, 0}));
    for (double& x : grid.coefficients[0]) x = 2.0;
    const Volume w = warp_volume(m, grid, m, -1.0);
    CHECK(w.at(3, 4, 5) == doctest::Approx(5.0));
    CHECK(w.at(10, 4, 5) == -1.0);
}

TEST_CASE("random grids and ground-truth fields")
{
    const GridGeometry g({4, 4, 4}, {8, 8, 8}, {0, 0, 0});
    const ControlPointGrid a = random_grid(g, 2.0, 9);
    CHECK(a.coefficients == random_grid(g, 2.0, 9).coefficients);
    for (const auto& lat : a.coefficients)
        for (double v : lat) CHECK(std::abs(v) <= 2.0);

    const auto zero = make_ground_truth_field(g, 0.0, 16.0, 1, 50);
    CHECK(mls(zero.fixed, zero.moving) == 0.0);

    const auto gt = make_ground_truth_field(g, 4.0, 16.0, 2, 120, 2.0);
    CHECK(gt.fixed.size() == 120u);
    CHECK(jacobian_map(gt.field, SamplingSpec::per_tile_samples({6, 6, 6})).min > 0.0);
    double peak = 0.0;
    for (const auto& lat : gt.field.coefficients)
        for (double v : lat) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(4.0));
    CHECK(warp_landmarks(gt.field, gt.fixed).warped.points == gt.moving.points);
    for (const auto& p : gt.fixed.points)
        for (int d = 0; d < 3; ++d) CHECK((p[d] >= 2.0 && p[d] <= 30.0));

    const auto again = make_ground_truth_field(g, 4.0, 16.0, 2, 120, 2.0);
    CHECK(again.field.coefficients == gt.field.coefficients);
    CHECK(again.moving.points == gt.moving.points);

    CHECK_THROWS_AS(make_ground_truth_field(g, 6.0, 16.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_ground_truth_field(g, 1.0, 16.0, 1, 10, 20.0), std::invalid_argument);
}
