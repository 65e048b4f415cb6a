#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "dehaze/metrics.hpp"

using namespace dehaze;

namespace {

std::vector<double> draw(Rng& rng, int n, double mean, double sd) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = mean + sd * rng.normal();
    return v;
}

} // namespace

TEST_CASE("cnr on worked examples") {
    CHECK(cnr(RoiPair{{0.9, 0.7}, {0.1, 0.3}}) == doctest::Approx(0.6 / std::sqrt(0.02)));
    CHECK(cnr(RoiPair{{0.1, 0.3}, {0.9, 0.7}}) == doctest::Approx(0.6 / std::sqrt(0.02)));
    CHECK(cnr(RoiPair{{0.2, 0.4}, {0.2, 0.4}}) == 0.0);
    CHECK_THROWS_AS(cnr(RoiPair{{0.5}, {0.1, 0.2}}), ParameterError);
    CHECK_THROWS_AS(cnr(RoiPair{{0.5, 0.5}, {0.2, 0.2}}), NumericalError);
}

TEST_CASE("gcnr extremes and reference agreement") {
    CHECK(gcnr(RoiPair{{0.9, 0.95}, {0.05, 0.1}}) == 1.0);
    CHECK(gcnr(RoiPair{{0.3, 0.6}, {0.6, 0.3}}) == 0.0);
    CHECK(gcnr(RoiPair{{1.5, 2.0}, {1.0, 1.0}}) == 0.0); // all clipped into the top bin
    CHECK_THROWS_AS(gcnr(RoiPair{{0.1}, {}}), ParameterError);
    CHECK_THROWS_AS(gcnr(RoiPair{{0.1}, {0.2}}, 1), ParameterError);

    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const RoiPair roi{draw(rng, 50, 0.6, 0.2), draw(rng, 70, 0.3, 0.2)};
        const double g = gcnr(roi);
        CHECK(g >= 0.0);
        CHECK(g <= 1.0);
        CHECK(g == doctest::Approx(testing::gcnr_reference(roi.septum, roi.ventricle, 100)).epsilon(1e-12));
        CHECK(g == doctest::Approx(gcnr(RoiPair{roi.ventricle, roi.septum})).epsilon(1e-12));
    }
}

TEST_CASE("ks statistic") {
    const std::vector<double> a{0.1, 0.2, 0.3}, b{0.7, 0.8};
    CHECK(ks_statistic(a, a) == 0.0);
    CHECK(ks_statistic(a, b) == 1.0);
    const std::vector<double> c{0.15, 0.25, 0.35, 0.45};
    CHECK(ks_statistic(a, c) == doctest::Approx(testing::ks_reference(a, c)));
    CHECK_THROWS_AS(ks_statistic(a, std::vector<double>{}), ParameterError);

    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x = draw(rng, 40, 0.0, 1.0), y = draw(rng, 55, 0.3, 1.2);
        if (trial % 3 == 0) // ties
            for (double& v : x) v = std::round(v * 4.0) / 4.0;
        const double d = ks_statistic(x, y);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
        CHECK(d == doctest::Approx(testing::ks_reference(x, y)).epsilon(1e-12));
        CHECK(d == ks_statistic(y, x));
        std::vector<double> ex = x, ey = y;
        for (double& v : ex) v = std::exp(v);
        for (double& v : ey) v = std::exp(v);
        CHECK(ks_statistic(ex, ey) == d);
    }
}

TEST_CASE("kid score equals a thousand times the reference estimator") {
    const IdentityEmbedder identity;
    Rng rng(3);
    std::vector<Raster> a, b;
    std::vector<std::vector<double>> fa, fb;
    for (int i = 0; i < 6; ++i) {
        a.push_back(testing::random_raster(1, 2, rng));
        b.push_back(testing::random_raster(1, 2, rng, 0.2, 1.0));
        fa.push_back({a.back()[0], a.back()[1]});
        fb.push_back({b.back()[0], b.back()[1]});
    }
    CHECK(std::abs(kid_score(a, b, identity) - 1e3 * testing::mmd2_reference(fa, fb)) <= 1e-7);
    CHECK(kid_score(a, b, identity) == doctest::Approx(kid_score(b, a, identity)).epsilon(1e-12));
    CHECK_THROWS_AS(kid_score(std::vector<Raster>{a[0]}, b, identity), ParameterError);
}

TEST_CASE("anchors clip and normalise") {
    const Anchor anchor{2.0, 4.0};
    CHECK(anchor.normalize(1.0) == 0.0);
    CHECK(anchor.normalize(3.0) == 0.5);
    CHECK(anchor.normalize(9.0) == 1.0);
    CHECK_THROWS_AS((Anchor{1.0, 1.0}.validate("x")), ConfigError);
}

TEST_CASE("final score weighting") {
    CHECK(final_score({1.0, 1.0, 1.0}) == doctest::Approx(1.0));
    CHECK(final_score({0.0, 0.0, 0.0}) == 0.0);
    CHECK(final_score({0.5, 0.2, 0.8}) == doctest::Approx(0.47));
    CHECK_THROWS_AS(final_score({std::nan(""), 0.2, 0.8}), ParameterError);
    CHECK_THROWS_AS(final_score({0.5, 0.2, 0.8}, ScoreWeights{0.0, 0.0, 0.0}), ParameterError);
}

TEST_CASE("score components leave out a missing kid") {
    MetricSettings s;
    MetricReport r;
    r.cnr = 2.5;           // -> 0.5
    r.gcnr = 0.4;          // -> 0.4
    r.ks_ventricle = 0.3;  // -> 0.7
    r.ks_septum = 0.1;     // -> 0.9
    r.kid = std::nan("");
    ScoreComponents c = score_components(r, s);
    CHECK(c.denoise == doctest::Approx((0.5 + 0.4 + 0.7) / 3.0));
    CHECK(c.structure == doctest::Approx(0.9));
    CHECK(c.downstream == 0.5);
    r.kid = 0.2; // -> 1 - 0.2
    c = score_components(r, s);
    CHECK(c.denoise == doctest::Approx((0.5 + 0.4 + 0.7 + 0.8) / 4.0));
}

TEST_CASE("per-image evaluation and aggregation") {
    Raster out(4, 4, 0.0f), clean(4, 4, 0.0f), hazy(4, 4, 0.0f);
    Mask v(4, 4), s(4, 4);
    for (int c = 0; c < 4; ++c) {
        v(0, c) = v(1, c) = 1;
        s(2, c) = s(3, c) = 1;
        out(0, c) = 0.1f * c;
        out(1, c) = 0.05f;
        out(2, c) = 0.8f + 0.05f * c;
        out(3, c) = 1.4f; // clamped to 1
        hazy(2, c) = out(2, c);
        hazy(3, c) = 1.0f;
        clean(0, c) = out(0, c);
        clean(1, c) = 0.05f;
    }
    const MetricSettings settings;
    const MetricReport r = evaluate_image(out, clean, hazy, v, s, settings);
    CHECK(r.ks_ventricle == 0.0);
    CHECK(r.ks_septum == 0.0);
    CHECK(r.gcnr == 1.0);
    CHECK(std::isnan(r.kid));
    CHECK(r.final_score >= 0.0);
    CHECK(r.final_score <= 1.0);

    const std::vector<MetricReport> reports{r, r};
    const MetricReport m = aggregate(reports, 0.0, settings);
    CHECK(m.cnr == doctest::Approx(r.cnr));
    CHECK(m.kid == 0.0);
    CHECK(std::isnan(aggregate(std::vector<MetricReport>{}, 0.0, settings).final_score));
}
