#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "panoctx/mesh.hpp"

using namespace panoctx;

namespace {

LayoutMesh make_cuboid(const Vec3& lo, const Vec3& hi) {
    LayoutMesh m;
    m.vertices.resize(8, 3);
    int i = 0;
    for (double z : {lo.z(), hi.z()})
        for (double y : {lo.y(), hi.y()})
            for (double x : {lo.x(), hi.x()}) m.vertices.row(i++) = Vec3{x, y, z};
    // 12 triangles, outward winding.
    const int f[12][3] = {{0, 2, 1}, {1, 2, 3},  // z = lo
                          {4, 5, 6}, {5, 7, 6},  // z = hi
                          {0, 1, 4}, {1, 5, 4},  // y = lo
                          {2, 6, 3}, {3, 6, 7},  // y = hi
                          {0, 4, 2}, {2, 4, 6},  // x = lo
                          {1, 3, 5}, {3, 7, 5}}; // x = hi
    for (const auto& t : f) m.faces.push_back({t[0], t[1], t[2]});
    return m;
}

}  // namespace

TEST_CASE("icosphere vertex counts per level") {
    const int expect[5] = {12, 42, 162, 642, 2562};
    for (int level = 0; level < 5; ++level) {
        auto m = icosphere(level);
        CHECK(m.vertex_count() == expect[level]);
        CHECK(m.is_watertight());
        CHECK(m.signed_volume() > 0.0);  // outward winding
        for (long i = 0; i < m.vertices.rows(); ++i)
            CHECK(std::abs(m.vertices.row(i).norm() - 1.0) < 1e-12);
    }
    CHECK(icosphere(0).face_count() == 20);
    CHECK_THROWS_AS(icosphere(8), DomainError);
    CHECK_THROWS_AS(icosphere(-1), DomainError);
}

TEST_CASE("edge count m = 3n - 6 and subdivision 4n - 6") {
    for (int level : {0, 1, 2, 3}) {
        auto m = icosphere(level);
        int n = m.vertex_count();
        CHECK(static_cast<int>(m.edges().size()) == 3 * n - 6);
        auto s = subdivide(m);
        CHECK(s.vertex_count() == 4 * n - 6);
        CHECK(s.is_watertight());
        CHECK(s.signed_volume() > 0.0);
    }
}

TEST_CASE("subdivide keeps new vertices at edge midpoints") {
    auto m = icosphere(1);
    auto s = subdivide(m);
    // Original vertices untouched, new ones strictly inside the unit sphere.
    for (int i = 0; i < m.vertex_count(); ++i)
        CHECK((s.vertices.row(i) - m.vertices.row(i)).norm() == 0.0);
    for (int i = m.vertex_count(); i < s.vertex_count(); ++i)
        CHECK(s.vertices.row(i).norm() < 1.0 - 1e-6);

    LayoutMesh broken = m;
    broken.faces.pop_back();
    CHECK_THROWS_AS(subdivide(broken), DataError);
}

TEST_CASE("deform") {
    auto m = icosphere(1);
    int n = m.vertex_count();
    auto same = deform(m, Eigen::MatrixXd::Zero(n, 3));
    CHECK((same.vertices - m.vertices).norm() == 0.0);

    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n, 3);
    t.col(0).setConstant(1.5);
    auto moved = deform(m, t);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < std::min(n, i + 4); ++j)
            CHECK((moved.vertices.row(i) - moved.vertices.row(j)).norm() ==
                  doctest::Approx((m.vertices.row(i) - m.vertices.row(j)).norm()));

    // Radial offsets scale the sphere.
    double r = 2.75;
    Eigen::MatrixXd radial = (r - 1.0) * m.vertices;
    auto scaled = deform(m, radial);
    for (int i = 0; i < n; ++i) CHECK(scaled.vertices.row(i).norm() == doctest::Approx(r));

    CHECK_THROWS_AS(deform(m, Eigen::MatrixXd::Zero(n + 1, 3)), DataError);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(n, 3);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(deform(m, bad), NumericalError);
}

TEST_CASE("graph_conv propagation") {
    auto m = icosphere(0);
    int n = m.vertex_count(), d = 4;
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> uval(-1.0, 1.0);
    Eigen::MatrixXd feats(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) feats(i, j) = uval(rng);
    Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d), Z = Eigen::MatrixXd::Zero(d, d);

    CHECK((graph_conv(m, feats, I, Z) - feats).norm() < 1e-15);

    Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(n, d) * 0.7;
    auto out = graph_conv(m, constant, 0.5 * I, 0.5 * I);
    CHECK((out - constant).norm() < 1e-12);

    // Impulse propagates only to the 1-ring (adjacency oracle from edges).
    Eigen::MatrixXd impulse = Eigen::MatrixXd::Zero(n, d);
    impulse(0, 0) = 1.0;
    auto spread = graph_conv(m, impulse, Z, I);
    std::set<int> ring;
    for (const auto& e : m.edges()) {
        if (e[0] == 0) ring.insert(e[1]);
        if (e[1] == 0) ring.insert(e[0]);
    }
    for (int i = 0; i < n; ++i) {
        if (ring.count(i))
            CHECK(spread(i, 0) > 0.0);
        else
            CHECK(spread(i, 0) == 0.0);
    }

    // Linearity in the features.
    Eigen::MatrixXd w1(d, d), w2(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            w1(i, j) = uval(rng);
            w2(i, j) = uval(rng);
        }
    Eigen::MatrixXd lhs = graph_conv(m, 2.0 * feats + constant, w1, w2);
    Eigen::MatrixXd rhs = 2.0 * graph_conv(m, feats, w1, w2) + graph_conv(m, constant, w1, w2);
    CHECK((lhs - rhs).norm() < 1e-12);
}

TEST_CASE("layout_iou on nested and disjoint cuboids") {
    auto unit = make_cuboid({0, 0, 0}, {1, 1, 1});
    REQUIRE(unit.is_watertight());
    REQUIRE(unit.signed_volume() == doctest::Approx(1.0));

    auto [i2_same, i3_same] = layout_iou(unit, unit, 64);
    CHECK(i2_same == doctest::Approx(1.0));
    CHECK(i3_same == doctest::Approx(1.0));

    auto half = make_cuboid({0.25, 0.25, 0.25}, {0.75, 0.75, 0.75});
    auto [i2, i3] = layout_iou(unit, half, 128);
    CHECK(std::abs(i3 - 0.125) <= 0.01);
    CHECK(std::abs(i2 - 0.25) <= 0.01);

    auto far = make_cuboid({5, 5, 5}, {6, 6, 6});
    auto [d2, d3] = layout_iou(unit, far, 64);
    CHECK(d2 == 0.0);
    CHECK(d3 == 0.0);

    LayoutMesh open_box = unit;
    open_box.faces.pop_back();
    CHECK_THROWS_AS(layout_iou(open_box, unit, 64), DataError);
    CHECK_THROWS_AS(layout_iou(unit, unit, 8), DomainError);
}

TEST_CASE("layout_iou symmetry and continuity") {
    auto a = make_cuboid({-1, -0.5, -2}, {1, 0.7, 2});
    auto b = make_cuboid({-0.5, -0.4, -1}, {1.5, 0.9, 2.5});
    auto [ab2, ab3] = layout_iou(a, b, 64);
    auto [ba2, ba3] = layout_iou(b, a, 64);
    CHECK(std::abs(ab3 - ba3) < 1.0 / 64);
    CHECK(std::abs(ab2 - ba2) < 1.0 / 64);

    Vec3 lo, hi;
    a.aabb(lo, hi);
    double diag = (hi - lo).norm();
    double prev = 0.0;
    for (double eps : {0.1, 0.01}) {
        LayoutMesh shifted = a;
        shifted.vertices.col(0).array() += eps * diag;
        auto [s2, s3] = layout_iou(a, shifted, 64);
        CHECK(s3 > prev);
        prev = s3;
    }
    CHECK(prev > 0.9);
}

TEST_CASE("OBJ roundtrip") {
    auto m = icosphere(2);
    write_obj(m, "test_mesh.obj");
    auto back = read_obj("test_mesh.obj");
    REQUIRE(back.vertex_count() == m.vertex_count());
    REQUIRE(back.face_count() == m.face_count());
    CHECK((back.vertices - m.vertices).norm() == 0.0);
    CHECK(back.faces == m.faces);
    std::remove("test_mesh.obj");
}
