#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "support.hpp"

#include "dehaze/checkpoint.hpp"
#include "dehaze/config.hpp"
#include "dehaze/pipeline.hpp"
#include "dehaze/raster_io.hpp"

using namespace dehaze;
namespace fs = std::filesystem;

namespace {

RunConfig quick_config() {
    RunConfig cfg;
    cfg.guidance.steps = 8;
    cfg.seed = 5;
    return cfg;
}

JobResources prior_resources(const Denoiser& d) {
    JobResources res;
    res.denoiser = &d;
    res.denoiser_digest = "gaussian-prior";
    return res;
}

fs::path phantom_dir(const std::string& name, int count) {
    const fs::path dir = testing::scratch_dir(name);
    PhantomSpec spec;
    spec.height = spec.width = 32;
    write_phantom_set(dir, generate_dataset(spec, count, 77));
    return dir;
}

} // namespace

TEST_CASE("config defaults, validation and round trip") {
    CHECK(parse_config("") == RunConfig{});
    CHECK(parse_config("# only a comment\n\n") == RunConfig{});
    CHECK_THROWS_AS(parse_config("guidance.eta = -1"), ConfigError);
    CHECK_THROWS_AS(parse_config("guidance.nonsense = 3"), ConfigError);
    CHECK_THROWS_AS(parse_config("guidance.steps = many"), ConfigError);
    CHECK_THROWS_AS(parse_config("train.kid_in_pretrain = maybe"), ConfigError);
    CHECK_FALSE(parse_config("train.kid_in_pretrain = false").train.kid_in_pretrain);
    CHECK(parse_config("eta = 0.01").guidance.eta == 0.01);

    try {
        parse_config("seg.omega_v = -2", "bad.cfg");
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("omega_v") != std::string::npos);
    }

    RunConfig c;
    c.guidance.eta = 0.1 / 3.0;
    c.guidance.gradient_mode = GradientMode::at_estimate;
    c.seg.omega_s = 1.2345678901234567;
    c.train.finetune_steps = 17;
    c.paths.checkpoint = "model.ckpt";
    c.seed = 99;
    CHECK(parse_config(to_text(c)) == c);
    for (const std::string& key : config_keys()) {
        RunConfig d;
        set_config_value(d, key, get_config_value(c, key));
        CHECK(get_config_value(d, key) == get_config_value(c, key));
    }
}

TEST_CASE("float rasters round-trip bitwise") {
    const fs::path dir = testing::scratch_dir("f32");
    Raster r(3, 5);
    Rng rng(1);
    for (float& v : r.storage()) v = static_cast<float>(rng.normal() * 1e3);
    r[0] = std::numeric_limits<float>::denorm_min();
    r[1] = -0.0f;
    r[2] = std::numeric_limits<float>::max();
    write_f32(dir / "r.f32", r);
    const Raster back = read_f32(dir / "r.f32");
    REQUIRE(back.same_shape(r));
    CHECK(std::memcmp(back.pixels().data(), r.pixels().data(), r.size() * sizeof(float)) == 0);

    std::ofstream(dir / "bad.f32", std::ios::binary) << "NOTMAGIC12345678";
    try {
        read_f32(dir / "bad.f32");
        FAIL("expected an IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("bad.f32") != std::string::npos);
    }
}

TEST_CASE("png quantisation") {
    CHECK(quantize_u8(0.5f) == 128);
    CHECK(quantize_u8(-1.0f) == 0);
    CHECK(quantize_u8(2.0f) == 255);
    const fs::path dir = testing::scratch_dir("png");
    Raster r(2, 2, 0.5f);
    r[3] = 1.0f;
    write_png(dir / "a.png", r);
    const Raster back = read_png(dir / "a.png");
    CHECK(back[0] == 128.0f / 255.0f);
    CHECK(back[3] == 1.0f);
    CHECK(quantized(r) == back);

    Mask v(4, 4), s(4, 4);
    v(0, 0) = 1;
    s(3, 3) = 1;
    write_mask_png(dir / "m.png", v, s);
    const RoiMasks m = read_mask_png(dir / "m.png");
    CHECK(m.ventricle == v);
    CHECK(m.septum == s);
    CHECK_THROWS_AS(list_files(dir / "missing", ".png"), IoError);
}

TEST_CASE("report lines round-trip") {
    MetricReport r{1.25, 0.5, 0.125, 0.0625, std::nan(""), 0.75};
    std::string name;
    const auto back = parse_report_line(format_report_line("img_01", r), &name);
    REQUIRE(back);
    CHECK(name == "img_01");
    CHECK(back->cnr == r.cnr);
    CHECK(back->ks_ventricle == r.ks_ventricle);
    CHECK(std::isnan(back->kid));
    CHECK_FALSE(parse_report_line("garbage"));
}

TEST_CASE("checkpoints round-trip weights and settings") {
    const fs::path dir = testing::scratch_dir("ckpt");
    UNetConfig arch;
    arch.base_channels = 4;
    arch.seed = 3;
    UNetDenoiser net(arch);
    net.set_data_variance(0.0425);
    net.ema_parameters()[0].value.data[0] += 1.0f;
    TrainConfig train;
    train.lambda_kid = 0.02;
    train.kid_in_pretrain = false;
    save_denoiser(dir / "m.ckpt", net, NoiseSchedule(0.02), train);

    const LoadedDenoiser live = load_denoiser(dir / "m.ckpt", false);
    CHECK(live.denoiser->parameters().distance(net.parameters()) == 0.0);
    CHECK(live.denoiser->ema_parameters().distance(net.ema_parameters()) == 0.0);
    CHECK(live.denoiser->config() == arch);
    CHECK(live.denoiser->data_variance() == 0.0425);
    CHECK(live.schedule.terminal_alpha() == 0.02);
    CHECK(live.train == train);
    const LoadedDenoiser ema = load_denoiser(dir / "m.ckpt", true);
    CHECK(ema.denoiser->parameters().distance(net.ema_parameters()) == 0.0);

    std::ofstream(dir / "junk.ckpt", std::ios::binary) << "not a checkpoint";
    CHECK_THROWS_AS(load_denoiser(dir / "junk.ckpt"), IoError);
}

TEST_CASE("empty input set is an empty successful job") {
    const GaussianPriorDenoiser prior(0.5, 0.2);
    const fs::path in = testing::scratch_dir("job-empty-in");
    const fs::path out = testing::scratch_dir("job-empty-out");
    const JobSummary s = run_dehaze_job(quick_config(), discover_inputs(in), out, prior_resources(prior));
    CHECK(s.items.empty());
    CHECK(s.failed() == 0);
    CHECK_FALSE(s.aggregate);
    CHECK(fs::exists(out / "summary.txt"));
}

TEST_CASE("dehaze job writes outputs, skips finished work and resumes") {
    const GaussianPriorDenoiser prior(0.5, 0.2);
    const fs::path in = phantom_dir("job-in", 2);
    const fs::path out = testing::scratch_dir("job-out");
    const InputSet inputs = discover_inputs(in);
    REQUIRE(inputs.images.size() == 2);
    const RunConfig cfg = quick_config();
    const JobResources res = prior_resources(prior);

    const JobSummary first = run_dehaze_job(cfg, inputs, out, res);
    REQUIRE(first.items.size() == 2);
    for (const JobItem& item : first.items) {
        CHECK_MESSAGE(item.status == ItemStatus::completed, item.error);
        CHECK(item.metrics);
        CHECK(fs::exists(out / "dehazed" / (item.name + ".png")));
        CHECK(fs::exists(out / "haze" / (item.name + ".png")));
        CHECK(fs::exists(out / "guidance" / (item.name + ".f32")));
    }
    REQUIRE(first.aggregate);
    CHECK(std::isfinite(first.aggregate->final_score));
    const std::string name0 = first.items[0].name;
    const std::string dehazed0 = read_file(out / "dehazed" / (name0 + ".png"));

    const JobSummary again = run_dehaze_job(cfg, inputs, out, res);
    CHECK(again.skipped() == 2);
    CHECK(again.aggregate->final_score == doctest::Approx(first.aggregate->final_score));

    fs::remove(out / "metrics" / (name0 + ".txt"));
    fs::remove(out / "dehazed" / (name0 + ".png"));
    const JobSummary resumed = run_dehaze_job(cfg, inputs, out, res);
    CHECK(resumed.skipped() == 1);
    CHECK(resumed.items[0].status == ItemStatus::completed);
    CHECK(read_file(out / "dehazed" / (name0 + ".png")) == dehazed0);

    RunConfig changed = cfg;
    changed.guidance.eta *= 2.0;
    CHECK(run_dehaze_job(changed, inputs, out, res).skipped() == 0);
}

TEST_CASE("a missing oracle mask is recorded as a failed item") {
    const GaussianPriorDenoiser prior(0.5, 0.2);
    const fs::path in = phantom_dir("job-nomask", 1);
    fs::remove_all(in / "masks");
    const JobSummary s = run_dehaze_job(quick_config(), discover_inputs(in), testing::scratch_dir("job-nomask-out"),
                                        prior_resources(prior));
    REQUIRE(s.items.size() == 1);
    CHECK(s.failed() == 1);
    CHECK_FALSE(s.items[0].error.empty());
}

TEST_CASE("sweep behaviour") {
    const GaussianPriorDenoiser prior(0.5, 0.2);
    RunConfig cfg = quick_config();
    cfg.sweep.images = 2;
    cfg.sweep.image_size = 32;
    cfg.sweep.steps = 4;
    cfg.sweep.trials = 3;
    const ValidationSet set = make_validation_set(cfg.sweep);
    REQUIRE(set.hazy.size() == 2);
    const JobResources res = prior_resources(prior);

    const auto suggestions = sweep_suggestions(cfg);
    REQUIRE(suggestions.size() == 3);
    CHECK(suggestions[0][0].second == cfg.guidance.eta);
    for (const auto& s : suggestions) {
        CHECK(s[0].second >= 1e-4);
        CHECK(s[0].second <= 1e-1);
    }

    const fs::path out = testing::scratch_dir("sweep");
    const SweepResult a = run_sweep(cfg, set, res, out);
    const SweepResult b = run_sweep(cfg, set, res);
    REQUIRE(a.trials.size() == 3);
    REQUIRE(a.best >= 0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.trials[i].objective == b.trials[i].objective);
    CHECK(a.trials[static_cast<std::size_t>(a.best)].objective >= a.trials[0].objective);

    RunConfig standalone = cfg;
    standalone.guidance.steps = cfg.sweep.steps;
    CHECK(a.trials[0].objective == evaluate_settings(standalone, set, res).final_score);

    const auto stamp = fs::last_write_time(out / "trials" / "0001.txt");
    const SweepResult resumed = run_sweep(cfg, set, res, out);
    CHECK(fs::last_write_time(out / "trials" / "0001.txt") == stamp);
    CHECK(resumed.trials[1].objective == a.trials[1].objective);
    CHECK(fs::exists(out / "sweep.tsv"));
    CHECK(fs::exists(out / "best.txt"));

    RunConfig single = cfg;
    single.sweep.trials = 1;
    const SweepResult one = run_sweep(single, set, res);
    REQUIRE(one.trials.size() == 1);
    CHECK(one.best == 0);
    CHECK(one.trials[0].objective == a.trials[0].objective);
}
