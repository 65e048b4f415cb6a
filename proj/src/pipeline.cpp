#include "dehaze/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "dehaze/hash.hpp"

namespace dehaze {

namespace fs = std::filesystem;

namespace {

std::string index_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return buf;
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError(p.string() + ": cannot create directory (" + ec.message() + ")");
}

/// Config lines that influence per-image results.
std::string algorithmic_settings(const RunConfig& c) {
    std::istringstream in(to_text(c));
    std::string line, out;
    for (std::string l; std::getline(in, l);)
        if (l.rfind("seed ", 0) == 0 || l.rfind("seg.", 0) == 0 || l.rfind("guidance.", 0) == 0 ||
            l.rfind("metrics.", 0) == 0)
            out += l + "\n";
    return out;
}

std::optional<std::string> sidecar_value(const std::string& text, const std::string& key) {
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);)
        if (l.rfind(key + " = ", 0) == 0) return l.substr(key.size() + 3);
    return std::nullopt;
}

const Embedder& metric_embedder() {
    static const RandomConvEmbedder embedder;
    return embedder;
}

double set_kid(const std::vector<Raster>& outputs, const std::vector<Raster>& references) {
    if (outputs.size() < 2 || references.size() < 2) return std::nan("");
    if (outputs[0].height() % 16 || outputs[0].width() % 16) return std::nan("");
    return kid_score(outputs, references, metric_embedder());
}

} // namespace

void write_phantom_set(const fs::path& dir, const std::vector<PhantomSample>& samples) {
    for (const char* sub : {"clean", "hazy", "masks", "sigma"}) ensure_dir(dir / sub);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string name = index_name(i);
        const PhantomSample& s = samples[i];
        write_png(dir / "clean" / (name + ".png"), s.clean);
        write_png(dir / "hazy" / (name + ".png"), s.hazy);
        write_mask_png(dir / "masks" / (name + ".png"), s.ventricle_mask, s.septum_mask);
        write_f32(dir / "sigma" / (name + ".f32"), s.true_sigma);
    }
}

InputSet discover_inputs(const fs::path& input) {
    InputSet set;
    fs::path root;
    if (fs::is_regular_file(input)) {
        set.images = {input};
        if (input.parent_path().filename() == "hazy") root = input.parent_path().parent_path();
    } else if (fs::is_directory(input / "hazy")) {
        root = input;
        set.images = list_files(input / "hazy", ".png");
    } else if (fs::is_directory(input)) {
        set.images = list_files(input, ".png");
        if (input.filename() == "hazy") root = input.parent_path();
    } else {
        throw IoError(input.string() + ": no such file or directory");
    }
    if (!root.empty()) {
        if (fs::is_directory(root / "clean")) set.clean_dir = root / "clean";
        if (fs::is_directory(root / "masks")) set.masks_dir = root / "masks";
    }
    return set;
}

Raster quantized(const Raster& r) {
    Raster out(r.height(), r.width());
    for (std::size_t i = 0; i < r.size(); ++i) out[i] = static_cast<float>(quantize_u8(r[i]) / 255.0);
    return out;
}

std::uint64_t image_seed(std::uint64_t run_seed, const std::string& name) {
    return derive_seed(run_seed, fnv1a(name));
}

std::string to_string(ItemStatus s) {
    switch (s) {
    case ItemStatus::completed: return "completed";
    case ItemStatus::skipped: return "skipped";
    case ItemStatus::failed: return "failed";
    }
    return "?";
}

int JobSummary::failed() const {
    int n = 0;
    for (const JobItem& i : items) n += i.status == ItemStatus::failed;
    return n;
}

int JobSummary::skipped() const {
    int n = 0;
    for (const JobItem& i : items) n += i.status == ItemStatus::skipped;
    return n;
}

std::string format_report_line(const std::string& name, const MetricReport& r) {
    return "name=" + name + " cnr=" + format_real(r.cnr) + " gcnr=" + format_real(r.gcnr) +
           " ks_septum=" + format_real(r.ks_septum) + " ks_ventricle=" + format_real(r.ks_ventricle) +
           " kid=" + format_real(r.kid) + " final_score=" + format_real(r.final_score);
}

std::optional<MetricReport> parse_report_line(const std::string& line, std::string* name) {
    std::istringstream in(line);
    MetricReport r;
    int seen = 0;
    for (std::string tok; in >> tok;) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) return std::nullopt;
        const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
        if (k == "name") {
            if (name) *name = v;
            continue;
        }
        double* slot = k == "cnr" ? &r.cnr
                       : k == "gcnr" ? &r.gcnr
                       : k == "ks_septum" ? &r.ks_septum
                       : k == "ks_ventricle" ? &r.ks_ventricle
                       : k == "kid" ? &r.kid
                       : k == "final_score" ? &r.final_score
                                            : nullptr;
        if (!slot) return std::nullopt;
        try {
            *slot = std::stod(v);
        } catch (const std::exception&) {
            return std::nullopt;
        }
        ++seen;
    }
    if (seen != 6) return std::nullopt;
    return r;
}

GuidanceMap guidance_for(const Raster& hazy, const RunConfig& config, const RegionSegmenter* segmenter,
                         const RoiMasks* masks) {
    const FixedBands bands{config.guidance.fixed_top, config.guidance.fixed_bottom};
    if (segmenter) return build_guidance(hazy, *segmenter, config.seg, bands);
    if (!masks) throw ParameterError("no segmenter configured and no reference masks for the oracle");
    const OracleSegmenter oracle(masks->ventricle, masks->septum);
    return build_guidance(hazy, oracle, config.seg, bands);
}

JobSummary run_dehaze_job(const RunConfig& config, const InputSet& inputs, const fs::path& out_dir,
                          const JobResources& res) {
    config.validate();
    if (!res.denoiser) throw ParameterError("run_dehaze_job: no denoiser loaded");
    for (const char* sub : {"dehazed", "haze", "guidance", "metrics"}) ensure_dir(out_dir / sub);
    const std::string settings = algorithmic_settings(config);

    JobSummary summary;
    std::vector<MetricReport> reports;
    std::vector<std::string> evaluated;
    for (const fs::path& image : inputs.images) {
        JobItem item;
        item.name = image.stem().string();
        const fs::path dehazed_png = out_dir / "dehazed" / (item.name + ".png");
        const fs::path haze_png = out_dir / "haze" / (item.name + ".png");
        const fs::path guidance_f32 = out_dir / "guidance" / (item.name + ".f32");
        const fs::path sidecar = out_dir / "metrics" / (item.name + ".txt");
        try {
            const fs::path clean_path = inputs.clean_dir.empty() ? fs::path() : inputs.clean_dir / image.filename();
            const fs::path mask_path = inputs.masks_dir.empty() ? fs::path() : inputs.masks_dir / image.filename();
            const bool has_clean = !clean_path.empty() && fs::exists(clean_path);
            const bool has_masks = !mask_path.empty() && fs::exists(mask_path);

            Fnv1a h;
            h.text(settings).text(res.denoiser_digest).text(res.segmenter_digest).text(read_file(image));
            if (has_clean) h.text(read_file(clean_path));
            if (has_masks) h.text(read_file(mask_path));
            char key[32];
            std::snprintf(key, sizeof key, "%016llx", static_cast<unsigned long long>(h.digest()));

            if (fs::exists(sidecar) && fs::exists(dehazed_png) && fs::exists(haze_png) && fs::exists(guidance_f32)) {
                const std::string text = read_file(sidecar);
                if (sidecar_value(text, "job_key") == std::string(key)) {
                    item.status = ItemStatus::skipped;
                    if (auto line = sidecar_value(text, "report")) item.metrics = parse_report_line(*line);
                }
            }

            if (item.status != ItemStatus::skipped) {
                const Raster y = read_png(image);
                std::optional<RoiMasks> masks;
                if (has_masks) masks = read_mask_png(mask_path);
                const GuidanceMap guidance = guidance_for(y, config, res.segmenter, masks ? &*masks : nullptr);
                const DehazeResult result = dehaze(y, guidance, *res.denoiser, res.schedule, config.guidance,
                                                   image_seed(config.seed, item.name));
                if (!decomposition_exact(y, result))
                    throw NumericalError("decomposition dehazed + haze == y is not exact");

                double half = 0.0;
                for (double v : result.haze.pixels()) half = std::max(half, std::abs(v));
                if (half == 0.0) half = 1.0;
                Raster haze_display(y.height(), y.width());
                for (std::size_t i = 0; i < y.size(); ++i)
                    haze_display[i] = static_cast<float>(0.5 + 0.5 * result.haze[i] / half);

                write_png(dehazed_png, result.dehazed);
                write_png(haze_png, haze_display);
                write_f32(guidance_f32, guidance.precision);

                std::string text = "job_key = " + std::string(key) + "\n";
                text += "seed = " + std::to_string(image_seed(config.seed, item.name)) + "\n";
                text += "haze_display = 0.5 + 0.5 * haze / " + format_real(half) + "\n";
                text += "effective_omega_v = " + format_real(guidance.effective_omega_v) + "\n";
                if (has_clean && masks) {
                    const Raster clean = read_png(clean_path);
                    item.metrics = evaluate_image(result.dehazed, clean, y, masks->ventricle, masks->septum,
                                                  config.metrics);
                    text += "report = " + format_report_line(item.name, *item.metrics) + "\n";
                }
                write_file_atomic(sidecar, text);
            }
            if (item.metrics && has_clean) {
                reports.push_back(*item.metrics);
                evaluated.push_back(item.name);
            }
        } catch (const std::exception& e) {
            item.status = ItemStatus::failed;
            item.error = e.what();
        }
        summary.items.push_back(std::move(item));
    }

    if (!reports.empty()) {
        std::vector<Raster> outputs, references;
        for (const std::string& name : evaluated) {
            outputs.push_back(read_png(out_dir / "dehazed" / (name + ".png")));
            references.push_back(read_png(inputs.clean_dir / (name + ".png")));
        }
        summary.aggregate = aggregate(reports, set_kid(outputs, references), config.metrics);
    }

    std::string text;
    for (const JobItem& item : summary.items) {
        if (item.metrics)
            text += format_report_line(item.name, *item.metrics) + "\n";
        else
            text += "name=" + item.name + " status=" + to_string(item.status) +
                    (item.error.empty() ? "" : " error=\"" + item.error + "\"") + "\n";
    }
    if (summary.aggregate) text += format_report_line("@aggregate", *summary.aggregate) + "\n";
    write_file_atomic(out_dir / "summary.txt", text);
    return summary;
}

JobSummary evaluate_directory(const fs::path& dehazed_dir, const fs::path& reference_dir, const fs::path& hazy_dir,
                              const fs::path& masks_dir, const MetricSettings& settings) {
    settings.validate();
    JobSummary summary;
    std::vector<MetricReport> reports;
    std::vector<Raster> outputs, references;
    for (const fs::path& p : list_files(dehazed_dir, ".png")) {
        JobItem item;
        item.name = p.stem().string();
        try {
            const Raster x = read_png(p);
            const Raster clean = read_png(reference_dir / p.filename());
            const Raster hazy = hazy_dir.empty() ? clean : read_png(hazy_dir / p.filename());
            const RoiMasks masks = read_mask_png(masks_dir / p.filename());
            item.metrics = evaluate_image(x, clean, hazy, masks.ventricle, masks.septum, settings);
            reports.push_back(*item.metrics);
            outputs.push_back(x);
            references.push_back(clean);
        } catch (const std::exception& e) {
            item.status = ItemStatus::failed;
            item.error = e.what();
        }
        summary.items.push_back(std::move(item));
    }
    if (!reports.empty()) summary.aggregate = aggregate(reports, set_kid(outputs, references), settings);
    return summary;
}

// ---------------------------------------------------------------- validation sets

std::uint64_t ValidationSet::content_hash() const {
    Fnv1a h;
    for (std::size_t i = 0; i < hazy.size(); ++i) {
        h.text(names[i]);
        h.values(hazy[i].pixels());
        h.values(clean[i].pixels());
        h.values(masks[i].ventricle.pixels());
        h.values(masks[i].septum.pixels());
    }
    return h.digest();
}

ValidationSet make_validation_set(const SweepConfig& sweep) {
    PhantomSpec spec;
    spec.height = spec.width = sweep.image_size;
    const auto samples = generate_dataset(spec, sweep.images, sweep.data_seed);
    ValidationSet set;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        set.names.push_back(index_name(i));
        set.hazy.push_back(quantized(samples[i].hazy));
        set.clean.push_back(quantized(samples[i].clean));
        set.masks.push_back(RoiMasks{samples[i].ventricle_mask, samples[i].septum_mask});
    }
    return set;
}

ValidationSet load_validation_set(const InputSet& inputs) {
    if (inputs.clean_dir.empty() || inputs.masks_dir.empty())
        throw ParameterError("validation set needs clean/ and masks/ next to hazy/");
    ValidationSet set;
    for (const fs::path& p : inputs.images) {
        set.names.push_back(p.stem().string());
        set.hazy.push_back(read_png(p));
        set.clean.push_back(read_png(inputs.clean_dir / p.filename()));
        set.masks.push_back(read_mask_png(inputs.masks_dir / p.filename()));
    }
    return set;
}

MetricReport evaluate_settings(const RunConfig& config, const ValidationSet& set, const JobResources& res) {
    config.validate();
    if (!res.denoiser) throw ParameterError("evaluate_settings: no denoiser loaded");
    std::vector<MetricReport> reports;
    std::vector<Raster> outputs;
    for (std::size_t i = 0; i < set.hazy.size(); ++i) {
        const Raster& y = set.hazy[i];
        const GuidanceMap guidance = guidance_for(y, config, res.segmenter, &set.masks[i]);
        const DehazeResult r = dehaze(y, guidance, *res.denoiser, res.schedule, config.guidance,
                                      image_seed(config.seed, set.names[i]));
        reports.push_back(
            evaluate_image(r.dehazed, set.clean[i], y, set.masks[i].ventricle, set.masks[i].septum, config.metrics));
        outputs.push_back(quantized(r.dehazed));
    }
    return aggregate(reports, set_kid(outputs, set.clean), config.metrics);
}

} // namespace dehaze
