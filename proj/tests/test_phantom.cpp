#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "dehaze/phantom.hpp"

using namespace dehaze;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

} // namespace

TEST_CASE("zero haze leaves the clean image untouched") {
    PhantomSpec spec;
    spec.haze.base_sigma = 0.0;
    spec.haze.peak_sigma = 0.0;
    const PhantomSample s = generate_phantom(spec);
    CHECK(s.hazy == s.clean);
    for (float h : s.true_haze.pixels()) CHECK(h == 0.0f);
}

TEST_CASE("septum is flat at the tissue level without speckle") {
    PhantomSpec spec;
    spec.speckle_strength = 0.0;
    spec.tissue_brightness = 0.8;
    const PhantomSample s = generate_phantom(spec);
    REQUIRE(count_nonzero(s.septum_mask) > 0);
    for (std::size_t i = 0; i < s.clean.size(); ++i)
        if (s.septum_mask[i]) CHECK(s.clean[i] == 0.8f);
}

TEST_CASE("haze draw is zero mean within three standard errors") {
    PhantomSpec spec;
    spec.seed = 7;
    const PhantomSample s = generate_phantom(spec);
    double sum = 0.0, sigma_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < s.true_haze.size(); ++i) {
        if (s.true_sigma[i] <= 0.0f) continue; // outside the imaging sector
        sum += s.true_haze[i];
        sigma_sum += s.true_sigma[i];
        ++n;
    }
    REQUIRE(n > 1000);
    const double mean = sum / static_cast<double>(n), sigma_bar = sigma_sum / static_cast<double>(n);
    CHECK(std::abs(mean) <= 3.0 * sigma_bar / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("type invariants hold on a dataset") {
    PhantomSpec spec;
    spec.height = spec.width = 64;
    for (const PhantomSample& s : generate_dataset(spec, 8, 11)) {
        for (std::size_t i = 0; i < s.clean.size(); ++i) {
            CHECK_FALSE((s.ventricle_mask[i] && s.septum_mask[i]));
            CHECK(s.ventricle_mask[i] <= 1);
            CHECK(s.septum_mask[i] <= 1);
            CHECK(s.clean[i] >= 0.0f);
            CHECK(s.clean[i] <= 1.0f);
            CHECK(s.hazy[i] >= 0.0f);
            CHECK(s.hazy[i] <= 1.0f);
            if (s.hazy[i] > 0.0f && s.hazy[i] < 1.0f) CHECK(s.hazy[i] - s.clean[i] == s.true_haze[i]);
        }
    }
}

TEST_CASE("standardised residuals pass a KS test against the standard normal") {
    PhantomSpec spec;
    spec.height = spec.width = 128;
    std::vector<double> z;
    for (const PhantomSample& s : generate_dataset(spec, 16, 5)) {
        for (std::size_t i = 0; i < s.true_haze.size() && z.size() < 100000; ++i)
            if (s.true_sigma[i] > 0.0f) z.push_back(static_cast<double>(s.true_haze[i]) / s.true_sigma[i]);
        if (z.size() >= 100000) break;
    }
    REQUIRE(z.size() == 100000);
    std::sort(z.begin(), z.end());
    const double n = static_cast<double>(z.size());
    double d = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double f = normal_cdf(z[i]);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
    }
    CHECK(d < 1.628 / std::sqrt(n)); // alpha = 0.01
}

TEST_CASE("dataset generation is deterministic and seeded per index") {
    PhantomSpec spec;
    spec.height = spec.width = 48;
    const auto a = generate_dataset(spec, 3, 9), b = generate_dataset(spec, 3, 9);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].hazy == b[i].hazy);
        CHECK(a[i].clean == b[i].clean);
    }
    CHECK(generate_dataset(spec, 1, 9).size() == 1);
    CHECK(generate_dataset(spec, 1, 9)[0].hazy == a[0].hazy);
    CHECK_FALSE(generate_dataset(spec, 1, 10)[0].hazy == a[0].hazy);
}

TEST_CASE("ventricle areas stay within the declared range") {
    PhantomSpec spec;
    spec.height = spec.width = 64;
    int ok = 0;
    for (const PhantomSample& s : generate_dataset(spec, 64, 21)) {
        const double frac = static_cast<double>(count_nonzero(s.ventricle_mask)) / static_cast<double>(s.clean.size());
        ok += frac >= 0.02 && frac <= 0.30;
    }
    CHECK(ok >= 60);
}

TEST_CASE("invalid phantom specs are rejected") {
    PhantomSpec spec;
    spec.ventricle.ax = 0.0;
    CHECK_THROWS_AS(generate_phantom(spec), ParameterError);
    spec = PhantomSpec{};
    spec.septum.thickness = -0.1;
    CHECK_THROWS_AS(generate_phantom(spec), ParameterError);
    spec = PhantomSpec{};
    spec.height = 16;
    CHECK_THROWS_AS(generate_phantom(spec), ParameterError);
    CHECK_THROWS_AS(generate_dataset(PhantomSpec{}, 0, 1), ParameterError);
}
