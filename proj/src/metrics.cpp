#include "dehaze/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dehaze {

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

Moments moments(const std::vector<double>& v) {
    Moments m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(v.size());
    return m;
}

} // namespace

RoiPair roi_pair(const Raster& image, const Mask& septum, const Mask& ventricle) {
    return RoiPair{masked_values(image, septum), masked_values(image, ventricle)};
}

double cnr(const RoiPair& roi) {
    if (roi.septum.size() < 2 || roi.ventricle.size() < 2)
        throw ParameterError("cnr: each region needs at least 2 pixels");
    const Moments s = moments(roi.septum), v = moments(roi.ventricle);
    const double spread = s.var + v.var;
    if (spread == 0.0) throw NumericalError("cnr: both regions have zero variance");
    return std::abs(s.mean - v.mean) / std::sqrt(spread);
}

double gcnr(const RoiPair& roi, int bins) {
    if (bins < 2) throw ParameterError("gcnr: bins must be >= 2");
    if (roi.septum.empty() || roi.ventricle.empty()) throw ParameterError("gcnr: empty region");
    auto histogram = [bins](const std::vector<double>& v) {
        std::vector<long long> h(static_cast<std::size_t>(bins), 0);
        for (double x : v) {
            const double c = std::clamp(x, 0.0, 1.0);
            const int k = std::min(static_cast<int>(c * bins), bins - 1);
            ++h[static_cast<std::size_t>(k)];
        }
        return h;
    };
    // Overlap is accumulated in integers over the common denominator ns * nv,
    // so identical histograms give exactly 0 and disjoint ones exactly 1.
    const auto hs = histogram(roi.septum), hv = histogram(roi.ventricle);
    const long long ns = static_cast<long long>(roi.septum.size()), nv = static_cast<long long>(roi.ventricle.size());
    long long shared = 0;
    for (std::size_t k = 0; k < hs.size(); ++k) shared += std::min(hs[k] * nv, hv[k] * ns);
    const double overlap = static_cast<double>(shared) / (static_cast<double>(ns) * static_cast<double>(nv));
    return std::clamp(1.0 - overlap, 0.0, 1.0);
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ParameterError("ks_statistic: empty sample");
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double na = static_cast<double>(x.size()), nb = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double t = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == t) ++i;
        while (j < y.size() && y[j] == t) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

double kid_score(std::span<const Raster> set_a, std::span<const Raster> set_b, const Embedder& embedder) {
    if (set_a.size() < 2 || set_b.size() < 2) throw ParameterError("kid_score: both sets need at least 2 images");
    return 1e3 * kid_loss(stack(set_a), stack(set_b), embedder);
}

void Anchor::validate(const std::string& name) const {
    if (!std::isfinite(min) || !std::isfinite(max) || !(min < max))
        throw ConfigError("score anchor " + name + ": min must be < max");
}

double Anchor::normalize(double v) const { return (std::clamp(v, min, max) - min) / (max - min); }

void ScoreAnchors::validate() const {
    cnr.validate("cnr");
    gcnr.validate("gcnr");
    ks.validate("ks");
    kid.validate("kid");
}

double final_score(const ScoreComponents& c, const ScoreWeights& w) {
    const double parts[] = {c.denoise, c.structure, c.downstream};
    for (double p : parts)
        if (!std::isfinite(p)) throw ParameterError("final_score: missing score component");
    const double total = w.denoise + w.structure + w.downstream;
    if (!(total > 0.0) || w.denoise < 0.0 || w.structure < 0.0 || w.downstream < 0.0)
        throw ParameterError("final_score: weights must be >= 0 with a positive sum");
    return (w.denoise * c.denoise + w.structure * c.structure + w.downstream * c.downstream) / total;
}

void MetricSettings::validate() const {
    anchors.validate();
    if (gcnr_bins < 2) throw ConfigError("metrics.gcnr_bins must be >= 2");
    if (!(downstream >= 0.0 && downstream <= 1.0)) throw ConfigError("metrics.downstream must lie in [0,1]");
}

ScoreComponents score_components(const MetricReport& r, const MetricSettings& s) {
    double sum = s.anchors.cnr.normalize(r.cnr) + s.anchors.gcnr.normalize(r.gcnr) +
                 (1.0 - s.anchors.ks.normalize(r.ks_ventricle));
    int n = 3;
    if (std::isfinite(r.kid)) {
        sum += 1.0 - s.anchors.kid.normalize(r.kid);
        ++n;
    }
    return ScoreComponents{sum / n, 1.0 - s.anchors.ks.normalize(r.ks_septum), s.downstream};
}

MetricReport evaluate_image(const Raster& output, const Raster& clean, const Raster& hazy, const Mask& ventricle,
                            const Mask& septum, const MetricSettings& settings, double kid) {
    require_same_shape(output, clean, "evaluate_image");
    require_same_shape(output, hazy, "evaluate_image");
    const Raster x = clamp01(output);
    const RoiPair roi = roi_pair(x, septum, ventricle);
    MetricReport r;
    r.cnr = cnr(roi);
    r.gcnr = gcnr(roi, settings.gcnr_bins);
    r.ks_ventricle = ks_statistic(roi.ventricle, masked_values(clean, ventricle));
    r.ks_septum = ks_statistic(roi.septum, masked_values(hazy, septum));
    r.kid = kid;
    r.final_score = final_score(score_components(r, settings));
    return r;
}

MetricReport aggregate(std::span<const MetricReport> reports, double kid, const MetricSettings& settings) {
    MetricReport m;
    m.kid = kid;
    if (reports.empty()) {
        m.cnr = m.gcnr = m.ks_septum = m.ks_ventricle = m.final_score = std::nan("");
        return m;
    }
    for (const MetricReport& r : reports) {
        m.cnr += r.cnr;
        m.gcnr += r.gcnr;
        m.ks_septum += r.ks_septum;
        m.ks_ventricle += r.ks_ventricle;
    }
    const double n = static_cast<double>(reports.size());
    m.cnr /= n;
    m.gcnr /= n;
    m.ks_septum /= n;
    m.ks_ventricle /= n;
    m.final_score = final_score(score_components(m, settings));
    return m;
}

} // namespace dehaze
