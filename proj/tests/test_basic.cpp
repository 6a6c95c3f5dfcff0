#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "adjud/bspline.hpp"
#include "adjud/cohort.hpp"
#include "adjud/config.hpp"
#include "adjud/legendre.hpp"
#include "adjud/rng.hpp"
#include "adjud/stats.hpp"
#include "test_util.hpp"

using namespace adjud;
using adjud::test::rel_err;

TEST_CASE("norm_quantile inverts norm_cdf") {
    CHECK(norm_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(norm_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-10));
    CHECK(norm_quantile(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-10));
    for (double p : {1e-6, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-6})
        CHECK(norm_cdf(norm_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
    CHECK_THROWS(norm_quantile(0.0));
    CHECK_THROWS(norm_quantile(1.0));
}

TEST_CASE("truncated normal sampling respects the sign constraint") {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        CHECK(sample_trunc_normal(rng, -0.5, 1.0, true) > 0.0);
        CHECK(sample_trunc_normal(rng, 0.5, 1.0, false) < 0.0);
        CHECK(sample_trunc_normal(rng, -8.0, 1.0, true) > 0.0);  // far tail
    }
    // mean of N(0,1) truncated to (0,inf) is sqrt(2/pi)
    double s = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) s += sample_trunc_normal(rng, 0.0, 1.0, true);
    CHECK(s / n == doctest::Approx(std::sqrt(2.0 / M_PI)).epsilon(0.01));
}

TEST_CASE("derive_seed is order-sensitive and stable") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}

TEST_CASE("summary statistics") {
    CHECK(mean({1, 2, 3}) == doctest::Approx(2.0));
    CHECK(sample_sd({1, 2, 3}) == doctest::Approx(1.0));
    CHECK(quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({3, 1, 2}, 0.0) == doctest::Approx(1.0));
    CHECK(quantile({3, 1, 2}, 1.0) == doctest::Approx(3.0));
    CHECK_THROWS(mean({}));

    // iid chain: ess close to n, rhat close to 1
    Rng rng(5);
    std::vector<double> chain;
    for (int i = 0; i < 4000; ++i) chain.push_back(rnorm(rng));
    CHECK(effective_sample_size(chain) > 2000.0);
    CHECK(split_rhat(chain) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("config parsing") {
    Config cfg = Config::from_string(
        "# comment\n"
        "alpha = 1.5\n"
        "name = run1  # trailing\n"
        "flag = true\n"
        "vec = [1, 2.5, -3]\n");
    CHECK(cfg.get_double("alpha") == doctest::Approx(1.5));
    CHECK(cfg.get_string("name") == "run1");
    CHECK(cfg.get_bool("flag", false));
    auto v = cfg.get_vector("vec");
    REQUIRE(v.size() == 3);
    CHECK(v[1] == doctest::Approx(2.5));
    CHECK(cfg.get_int("missing", 7) == 7);
    CHECK_THROWS(cfg.get_double("missing"));
}

TEST_CASE("legendre basis endpoints") {
    auto [p1a, p2a] = legendre_basis(0, 20);
    CHECK(p1a == doctest::Approx(-1.0));
    CHECK(p2a == doctest::Approx(1.0));
    auto [p1b, p2b] = legendre_basis(10, 20);
    CHECK(p1b == doctest::Approx(0.0));
    CHECK(p2b == doctest::Approx(-0.5));
    auto [p1c, p2c] = legendre_basis(20, 20);
    CHECK(p1c == doctest::Approx(1.0));
    CHECK(p2c == doctest::Approx(1.0));
    CHECK_THROWS(legendre_basis(1, 0));
}

TEST_CASE("trajectory value, slope, area worked examples") {
    TrajectoryCoefficients c;
    c.b0 = 100;
    c.b1 = 10;
    c.b2 = 5;
    c.scale = 20;
    CHECK(trajectory_value(c, 10) == doctest::Approx(97.5));
    CHECK(trajectory_value(c, 0) == doctest::Approx(95.0));
    CHECK(trajectory_slope(c, 10) == doctest::Approx(1.0));
    CHECK(trajectory_slope(c, 0) == doctest::Approx(-0.5));
    TrajectoryCoefficients zero;
    zero.scale = 20;
    CHECK(trajectory_value(zero, 7) == doctest::Approx(0.0));
    CHECK(trajectory_slope(zero, 7) == doctest::Approx(0.0));

    TrajectoryCoefficients lin;
    lin.b1 = 10;
    lin.scale = 20;
    CHECK(trajectory_area(lin, 0, 10) == doctest::Approx(-50.0));
    TrajectoryCoefficients flat;
    flat.b0 = 3.5;
    flat.scale = 20;
    CHECK(trajectory_area(flat, 0, 20) == doctest::Approx(3.5 * 20));
    CHECK(trajectory_area(c, 4, 4) == doctest::Approx(0.0));
    CHECK_THROWS(trajectory_value(c, 21));
    CHECK_THROWS(trajectory_area(c, 5, 4));
}

TEST_CASE("legendre orthogonality by quadrature") {
    const double T = 17.0;
    double i1 = 0, i2 = 0, i12 = 0;
    const int n = 4000;
    for (int k = 0; k < n; ++k) {
        const double t = (k + 0.5) * T / n;
        auto [p1, p2] = legendre_basis(t, T);
        i1 += p1;
        i2 += p2;
        i12 += p1 * p2;
    }
    CHECK(std::abs(i1 * T / n) < 1e-8);
    CHECK(std::abs(i2 * T / n) < 1e-8);
    CHECK(std::abs(i12 * T / n) < 1e-8);
}

TEST_CASE("area derivative equals value") {
    Rng rng(3);
    TrajectoryCoefficients c;
    c.scale = 31;
    for (int trial = 0; trial < 50; ++trial) {
        c.b0 = 5 * rnorm(rng);
        c.b1 = 5 * rnorm(rng);
        c.b2 = 5 * rnorm(rng);
        c.fixed_offset = rnorm(rng);
        const double t = 1.0 + 29.0 * runif(rng);
        const double h = 1e-5;
        const double fd = (trajectory_area(c, 0, t + h) - trajectory_area(c, 0, t - h)) / (2 * h);
        CHECK(std::abs(fd - trajectory_value(c, t)) < 1e-6);
    }
}

TEST_CASE("bspline partition of unity and continuity") {
    BSplineBasis basis(0.0, 10.0, {2.0, 5.0, 7.5});
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const double t = 10.0 * runif(rng);
        auto row = basis.eval(t);
        double s = 0.0;
        for (double v : row) s += v;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    std::vector<double> coef;
    for (int i = 0; i < basis.size(); ++i) coef.push_back(rnorm(rng));
    // continuity at an interior knot
    CHECK(basis.dot(5.0 - 1e-9, coef) == doctest::Approx(basis.dot(5.0 + 1e-9, coef)).epsilon(1e-6));
    // constant coefficients reproduce the constant
    std::vector<double> ones(static_cast<std::size_t>(basis.size()), 2.5);
    CHECK(basis.dot(3.3, ones) == doctest::Approx(2.5).epsilon(1e-12));
    CHECK_THROWS(basis.dot(11.0, coef));
}

TEST_CASE("cohort IO round trip") {
    Cohort c = adjud::test::small_cohort(40, 77);
    c.validate();
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "adjud_cohort_test";
    fs::create_directories(dir);
    const std::string lp = (dir / "l.csv").string(), sp = (dir / "s.jsonl").string(),
                      ep = (dir / "e.csv").string();
    write_cohort(c, lp, sp, ep);
    Cohort back = read_cohort(lp, sp, ep);
    back.validate();
    REQUIRE(back.subjects.size() == c.subjects.size());
    REQUIRE(back.longitudinal.size() == c.longitudinal.size());
    REQUIRE(back.events.size() == c.events.size());
    CHECK(back.t_max == doctest::Approx(c.t_max));
    for (std::size_t i = 0; i < c.subjects.size(); ++i) {
        CHECK(back.subjects[i].id == c.subjects[i].id);
        CHECK(back.subjects[i].bmi == doctest::Approx(c.subjects[i].bmi).epsilon(1e-9));
    }
    for (std::size_t i = 0; i < c.events.size(); ++i) {
        CHECK(back.events[i].dead == c.events[i].dead);
        CHECK(back.events[i].observed_time ==
              doctest::Approx(c.events[i].observed_time).epsilon(1e-9));
    }
}

TEST_CASE("cohort split is a partition with the requested sizes") {
    Cohort c = adjud::test::small_cohort(100, 4);
    auto [a, b] = split_cohort(c, 0.75, 123);
    CHECK(a.subjects.size() == 75);
    CHECK(b.subjects.size() == 25);
    CHECK(a.longitudinal.size() + b.longitudinal.size() == c.longitudinal.size());
    std::set<std::string> ids;
    for (const auto& s : a.subjects) ids.insert(s.id);
    for (const auto& s : b.subjects) CHECK(ids.count(s.id) == 0);
    // deterministic given the seed
    auto [a2, b2] = split_cohort(c, 0.75, 123);
    CHECK(a2.subjects.front().id == a.subjects.front().id);
    CHECK(b2.subjects.front().id == b.subjects.front().id);
}

TEST_CASE("confusion metrics from the reference cross-tabulation") {
    // adjudicated x ICD cross-tabulation counts of the source cohort
    ConfusionTable t{1597, 841, 1151, 4852};
    ConfusionMetrics m = confusion_metrics(t);
    CHECK(m.sensitivity == doctest::Approx(1597.0 / 2748.0).epsilon(1e-12));
    CHECK(m.specificity == doctest::Approx(4852.0 / 5693.0).epsilon(1e-12));
    CHECK(m.misclassification_rate == doctest::Approx(1151.0 / 2748.0).epsilon(1e-12));
    CHECK(m.sensitivity == doctest::Approx(0.58).epsilon(0.01));
    CHECK(m.specificity == doctest::Approx(0.85).epsilon(0.01));
    CHECK_THROWS(confusion_metrics(ConfusionTable{0, 5, 0, 5}));
}

TEST_CASE("filter_dead keeps exactly the dead subjects") {
    Cohort c = adjud::test::small_cohort(60, 21);
    Cohort d = filter_dead(c);
    std::size_t dead = 0;
    for (const auto& e : c.events) dead += e.dead ? 1 : 0;
    CHECK(d.subjects.size() == dead);
    for (const auto& e : d.events) CHECK(e.dead);
    d.validate();
}
