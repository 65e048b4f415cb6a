// Command-line front end: phantom data, training, segmentation, dehazing,
// evaluation, sweeps and unconditional sampling.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dehaze/checkpoint.hpp"
#include "dehaze/config.hpp"
#include "dehaze/hash.hpp"
#include "dehaze/phantom.hpp"
#include "dehaze/pipeline.hpp"
#include "dehaze/raster_io.hpp"
#include "dehaze/region_segmenter.hpp"

namespace fs = std::filesystem;
using namespace dehaze;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitConfig = 2;

constexpr const char* kOutputRootEnv = "ECHODEHAZE_OUTPUT_ROOT";

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = false) {
    cmd->add_option("--config", c.config, "Run configuration (key = value)");
    cmd->add_option("--seed", c.seed, "Seed overriding the configuration");
    auto* o = cmd->add_option("--out", c.out, "Output location");
    if (out_required) o->required();
}

RunConfig load(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

/// --out when given, else $ECHODEHAZE_OUTPUT_ROOT/<verb>, else ./runs/<verb>.
fs::path output_path(const Common& c, const std::string& verb) {
    if (!c.out.empty()) return c.out;
    const char* root = std::getenv(kOutputRootEnv);
    return fs::path(root && *root ? root : "runs") / verb;
}

std::pair<int, int> parse_size(const std::string& s) {
    const auto x = s.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(s);
        return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
    } catch (const std::exception&) {
        throw ConfigError("--size must look like HxW, got '" + s + "'");
    }
}

std::string digest_of(const fs::path& p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(read_file(p))));
    return buf;
}

std::vector<Raster> load_clean_images(const fs::path& dir) {
    const fs::path src = fs::is_directory(dir / "clean") ? dir / "clean" : dir;
    std::vector<Raster> out;
    for (const fs::path& p : list_files(src, ".png")) out.push_back(read_png(p));
    if (out.empty()) throw ConfigError(src.string() + ": no PNG images found");
    return out;
}

std::vector<SegExample> load_seg_examples(const fs::path& dir) {
    const InputSet in = discover_inputs(dir);
    if (in.masks_dir.empty()) throw ConfigError(dir.string() + ": expected hazy/ and masks/ subdirectories");
    std::vector<SegExample> out;
    for (const fs::path& p : in.images) {
        RoiMasks m = read_mask_png(in.masks_dir / p.filename());
        out.push_back({read_png(p), std::move(m.ventricle), std::move(m.septum)});
    }
    return out;
}

int job_status(const JobSummary& s) { return s.failed() > 0 ? kExitPartial : kExitOk; }

void print_summary(const JobSummary& s) {
    std::printf("images: %zu  skipped: %d  failed: %d\n", s.items.size(), s.skipped(), s.failed());
    for (const JobItem& i : s.items)
        if (i.status == ItemStatus::failed) std::fprintf(stderr, "failed %s: %s\n", i.name.c_str(), i.error.c_str());
    if (s.aggregate) std::printf("%s\n", format_report_line("@aggregate", *s.aggregate).c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Segmentation-guided diffusion dehazing for echocardiography"};
    app.require_subcommand(1);

    // phantom generate
    Common ph;
    int ph_count = 16;
    std::string ph_size = "128x128";
    auto* phantom = app.add_subcommand("phantom", "Synthetic phantom data");
    phantom->require_subcommand(1);
    auto* generate = phantom->add_subcommand("generate", "Write a phantom set");
    add_common(generate, ph);
    generate->add_option("--count", ph_count, "Number of phantoms")->check(CLI::PositiveNumber);
    generate->add_option("--size", ph_size, "Image size HxW");

    // train-diffusion
    Common td;
    std::string td_data, td_pretrain, td_size;
    auto* train_diff = app.add_subcommand("train-diffusion", "Train the clean-image diffusion prior");
    add_common(train_diff, td);
    train_diff->add_option("--data", td_data, "Clean images (DIR or DIR/clean) for the final phase");
    train_diff->add_option("--pretrain-data", td_pretrain, "Broader clean set for the pretraining phase");

    // train-segmenter
    Common ts;
    std::string ts_data, ts_val;
    auto* train_seg = app.add_subcommand("train-segmenter", "Train the learned region segmenter");
    add_common(train_seg, ts);
    train_seg->add_option("--data", ts_data, "Phantom root with hazy/ and masks/")->required();
    train_seg->add_option("--validation", ts_val, "Held-out phantom root");

    // segment
    Common sg;
    std::string sg_input, sg_weights, sg_map, sg_debug, sg_segmenter;
    int sg_top = -1, sg_bottom = -1;
    auto* segment = app.add_subcommand("segment", "Build the guidance precision map for one image");
    add_common(segment, sg);
    segment->add_option("--input", sg_input, "Hazy PNG")->required();
    segment->add_option("--weights", sg_weights, "Segmentation weights (key = value)");
    segment->add_option("--out-map", sg_map, "Precision map (.f32)")->required();
    segment->add_option("--out-debug", sg_debug, "Directory for per-component PNGs");
    segment->add_option("--segmenter", sg_segmenter, "Learned segmenter checkpoint (default: mask oracle)");
    segment->add_option("--fixed-top", sg_top, "Rows kept fixed at the top");
    segment->add_option("--fixed-bottom", sg_bottom, "Rows kept fixed at the bottom");

    // dehaze
    Common dh;
    std::string dh_input, dh_ckpt, dh_weights, dh_segmenter;
    int dh_top = -1, dh_bottom = -1;
    auto* dehaze_cmd = app.add_subcommand("dehaze", "Dehaze an image or a directory");
    add_common(dehaze_cmd, dh);
    dehaze_cmd->add_option("--input", dh_input, "Hazy PNG or directory")->required();
    dehaze_cmd->add_option("--ckpt", dh_ckpt, "Diffusion checkpoint");
    dehaze_cmd->add_option("--seg-weights", dh_weights, "Segmentation weights (key = value)");
    dehaze_cmd->add_option("--segmenter", dh_segmenter, "Learned segmenter checkpoint (default: mask oracle)");
    dehaze_cmd->add_option("--fixed-top", dh_top, "Rows kept fixed at the top");
    dehaze_cmd->add_option("--fixed-bottom", dh_bottom, "Rows kept fixed at the bottom");

    // evaluate
    Common ev;
    std::string ev_dehazed, ev_reference, ev_masks, ev_hazy;
    auto* evaluate = app.add_subcommand("evaluate", "Score dehazed images against references");
    add_common(evaluate, ev);
    evaluate->add_option("--dehazed", ev_dehazed, "Dehazed PNG directory")->required();
    evaluate->add_option("--reference", ev_reference, "Clean reference directory")->required();
    evaluate->add_option("--masks", ev_masks, "Label-encoded ROI masks directory")->required();
    evaluate->add_option("--hazy", ev_hazy, "Hazy inputs, for the septum KS term (default: reference)");

    // sweep
    Common sw;
    std::string sw_ckpt, sw_data, sw_segmenter;
    auto* sweep = app.add_subcommand("sweep", "Random hyperparameter search");
    add_common(sweep, sw);
    sweep->add_option("--ckpt", sw_ckpt, "Diffusion checkpoint");
    sweep->add_option("--data", sw_data, "Validation phantom root (default: generated from sweep.data_seed)");
    sweep->add_option("--segmenter", sw_segmenter, "Learned segmenter checkpoint (default: mask oracle)");

    // sample
    Common sm;
    std::string sm_ckpt, sm_size = "64x64";
    int sm_count = 4, sm_steps = 0;
    auto* sample = app.add_subcommand("sample", "Unconditional samples from the prior");
    add_common(sample, sm);
    sample->add_option("--ckpt", sm_ckpt, "Diffusion checkpoint")->required();
    sample->add_option("--count", sm_count, "Number of samples")->check(CLI::PositiveNumber);
    sample->add_option("--steps", sm_steps, "Sampling steps (default: guidance.steps)");
    sample->add_option("--size", sm_size, "Image size HxW");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    auto apply_overrides = [](RunConfig& cfg, const std::string& weights, int top, int bottom) {
        if (!weights.empty()) cfg.seg = load_config(weights).seg;
        if (top >= 0) cfg.guidance.fixed_top = top;
        if (bottom >= 0) cfg.guidance.fixed_bottom = bottom;
        cfg.validate();
    };

    try {
        if (generate->parsed()) {
            const RunConfig cfg = load(ph);
            const auto [h, w] = parse_size(ph_size);
            PhantomSpec spec;
            spec.height = h;
            spec.width = w;
            const fs::path out = output_path(ph, "phantom");
            write_phantom_set(out, generate_dataset(spec, ph_count, cfg.seed));
            std::printf("wrote %d phantoms to %s\n", ph_count, out.c_str());
            return kExitOk;
        }

        if (train_diff->parsed()) {
            RunConfig cfg = load(td);
            const std::string data = td_data.empty() ? cfg.paths.data : td_data;
            const std::string pre = td_pretrain.empty() ? cfg.paths.pretrain_data : td_pretrain;
            if (data.empty()) throw ConfigError("train-diffusion needs --data or paths.data");
            const auto narrow = load_clean_images(data);
            const auto broad = pre.empty() ? narrow : load_clean_images(pre);
            for (const auto* set : {&narrow, &broad})
                for (const Raster& r : *set)
                    if (!r.same_shape(narrow[0]) || r.height() % 16 || r.width() % 16)
                        throw ConfigError("training images must share one size with extents multiple of 16");
            const fs::path out = output_path(td, "model.ckpt");
            if (out.has_parent_path()) fs::create_directories(out.parent_path());

            UNetDenoiser model(cfg.model);
            const NoiseSchedule schedule;
            const RandomConvEmbedder embedder;
            std::string trace = "step\tphase\tlr\tdsm\tkid\ttotal\n";
            auto log = [&](const TrainRecord& r) {
                trace += std::to_string(r.step) + "\t" + r.phase + "\t" + format_real(r.learning_rate) + "\t" +
                         format_real(r.loss.dsm) + "\t" +
                         (r.loss.kid_evaluated ? format_real(r.loss.kid) : std::string("-")) + "\t" +
                         format_real(r.loss.total) + "\n";
                if (r.step % 100 == 0)
                    std::fprintf(stderr, "[%s] step %d dsm %.4f\n", r.phase.c_str(), r.step, r.loss.dsm);
            };
            pretrain_finetune(model, broad, narrow, cfg.train, schedule, embedder, log);
            save_denoiser(out, model, schedule, cfg.train, {{"images", narrow.size()}});
            write_file_atomic(out.string() + ".loss.tsv", trace);
            std::printf("saved %s\n", out.c_str());
            return kExitOk;
        }

        if (train_seg->parsed()) {
            const RunConfig cfg = load(ts);
            std::vector<SegExample> train = load_seg_examples(ts_data);
            std::vector<SegExample> val = ts_val.empty() ? std::vector<SegExample>{} : load_seg_examples(ts_val);
            if (train.size() < 16) std::fprintf(stderr, "warning: fewer than 16 training pairs\n");
            SegTrainReport report;
            const LearnedSegmenter model = train_region_segmenter(train, val, cfg.segmenter, cfg.seg.theta, &report);
            const fs::path out = output_path(ts, "segmenter.ckpt");
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
            save_segmenter(out, model, cfg.segmenter,
                           {{"validation_dice_ventricle", report.validation_dice_ventricle},
                            {"validation_dice_septum", report.validation_dice_septum}});
            std::string trace = "step\tloss\n";
            for (std::size_t i = 0; i < report.loss_trace.size(); ++i)
                trace += std::to_string(i) + "\t" + format_real(report.loss_trace[i]) + "\n";
            write_file_atomic(out.string() + ".loss.tsv", trace);
            std::printf("train dice (ventricle) %.4f\n", report.train_dice_ventricle);
            if (!val.empty())
                std::printf("validation dice ventricle %.4f septum %.4f\n", report.validation_dice_ventricle,
                            report.validation_dice_septum);
            return kExitOk;
        }

        if (segment->parsed()) {
            RunConfig cfg = load(sg);
            apply_overrides(cfg, sg_weights, sg_top, sg_bottom);
            const Raster y = read_png(sg_input);
            std::unique_ptr<LearnedSegmenter> learned;
            const std::string seg_path = sg_segmenter.empty() ? cfg.paths.segmenter : sg_segmenter;
            if (!seg_path.empty()) learned = load_segmenter(seg_path);
            std::optional<RoiMasks> masks;
            const InputSet in = discover_inputs(sg_input);
            if (!learned && !in.masks_dir.empty()) masks = read_mask_png(in.masks_dir / fs::path(sg_input).filename());
            const GuidanceMap g = guidance_for(y, cfg, learned.get(), masks ? &*masks : nullptr);
            write_f32(sg_map, g.precision);
            if (!sg_debug.empty()) {
                const fs::path d = sg_debug;
                fs::create_directories(d);
                write_png(d / "ventricle.png", g.bundle.ventricle);
                write_png(d / "septum.png", g.bundle.septum);
                write_binary_png(d / "skeleton.png", g.bundle.skeleton);
                write_binary_png(d / "background.png", g.bundle.background);
                write_binary_png(d / "dark.png", g.bundle.dark);
                float peak = 0.0f;
                for (float v : g.precision.pixels()) peak = std::max(peak, v);
                Raster shown = g.precision;
                if (peak > 0.0f)
                    for (float& v : shown.storage()) v /= peak;
                write_png(d / "precision.png", shown);
            }
            std::printf("effective omega_v %.4g%s\n", g.effective_omega_v,
                        g.ventricle_split ? " (ventricle split by skeleton)" : "");
            return kExitOk;
        }

        if (dehaze_cmd->parsed()) {
            RunConfig cfg = load(dh);
            apply_overrides(cfg, dh_weights, dh_top, dh_bottom);
            const std::string ckpt = dh_ckpt.empty() ? cfg.paths.checkpoint : dh_ckpt;
            if (ckpt.empty()) throw ConfigError("dehaze needs --ckpt or paths.checkpoint");
            LoadedDenoiser model = load_denoiser(ckpt);
            std::unique_ptr<LearnedSegmenter> learned;
            const std::string seg_path = dh_segmenter.empty() ? cfg.paths.segmenter : dh_segmenter;
            JobResources res{model.denoiser.get(), model.schedule, digest_of(ckpt)};
            if (!seg_path.empty()) {
                learned = load_segmenter(seg_path);
                res.segmenter = learned.get();
                res.segmenter_digest = digest_of(seg_path);
            }
            const JobSummary s = run_dehaze_job(cfg, discover_inputs(dh_input), output_path(dh, "dehaze"), res);
            print_summary(s);
            return job_status(s);
        }

        if (evaluate->parsed()) {
            const RunConfig cfg = load(ev);
            const JobSummary s = evaluate_directory(ev_dehazed, ev_reference, ev_hazy, ev_masks, cfg.metrics);
            std::string text;
            for (const JobItem& i : s.items)
                text += i.metrics ? format_report_line(i.name, *i.metrics) + "\n"
                                  : "name=" + i.name + " status=failed error=\"" + i.error + "\"\n";
            if (s.aggregate) text += format_report_line("@aggregate", *s.aggregate) + "\n";
            const fs::path out = output_path(ev, "report.txt");
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
            write_file_atomic(out, text);
            print_summary(s);
            return job_status(s);
        }

        if (sweep->parsed()) {
            const RunConfig cfg = load(sw);
            const std::string ckpt = sw_ckpt.empty() ? cfg.paths.checkpoint : sw_ckpt;
            if (ckpt.empty()) throw ConfigError("sweep needs --ckpt or paths.checkpoint");
            LoadedDenoiser model = load_denoiser(ckpt);
            JobResources res{model.denoiser.get(), model.schedule, digest_of(ckpt)};
            std::unique_ptr<LearnedSegmenter> learned;
            const std::string seg_path = sw_segmenter.empty() ? cfg.paths.segmenter : sw_segmenter;
            if (!seg_path.empty()) {
                learned = load_segmenter(seg_path);
                res.segmenter = learned.get();
                res.segmenter_digest = digest_of(seg_path);
            }
            const ValidationSet set =
                sw_data.empty() ? make_validation_set(cfg.sweep) : load_validation_set(discover_inputs(sw_data));
            const SweepResult r = run_sweep(cfg, set, res, output_path(sw, "sweep"));
            for (const SweepTrial& t : r.trials)
                std::printf("trial %d %s objective %.6f\n", t.trial_id,
                            t.status == TrialStatus::completed ? "completed" : "failed", t.objective);
            if (r.best < 0) {
                std::fprintf(stderr, "no trial completed\n");
                return kExitPartial;
            }
            std::printf("best trial %d objective %.6f\n", r.trials[static_cast<std::size_t>(r.best)].trial_id,
                        r.trials[static_cast<std::size_t>(r.best)].objective);
            for (const SweepTrial& t : r.trials)
                if (t.status == TrialStatus::failed) return kExitPartial;
            return kExitOk;
        }

        if (sample->parsed()) {
            const RunConfig cfg = load(sm);
            const auto [h, w] = parse_size(sm_size);
            LoadedDenoiser model = load_denoiser(sm_ckpt);
            const int steps = sm_steps > 0 ? sm_steps : cfg.guidance.steps;
            const auto images = sample_unconditional(*model.denoiser, model.schedule, steps, cfg.seed, sm_count, h, w);
            const fs::path out = output_path(sm, "samples");
            fs::create_directories(out);
            for (std::size_t i = 0; i < images.size(); ++i) {
                char name[16];
                std::snprintf(name, sizeof name, "%04zu.png", i);
                write_png(out / name, images[i]);
            }
            std::printf("wrote %d samples to %s\n", sm_count, out.c_str());
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "configuration error: %s\n", e.what());
        return kExitConfig;
    } catch (const ParameterError& e) {
        std::fprintf(stderr, "invalid parameter: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitPartial;
    }
    return kExitOk;
}
