#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dehaze/config.hpp"
#include "dehaze/metrics.hpp"
#include "dehaze/phantom.hpp"
#include "dehaze/raster_io.hpp"
#include "dehaze/sampler.hpp"

namespace dehaze {

/// Writes `count` phantoms as DIR/{clean,hazy,masks}/NNNN.png and DIR/sigma/NNNN.f32.
void write_phantom_set(const std::filesystem::path& dir, const std::vector<PhantomSample>& samples);

/// Image paths for a dehaze or evaluate run. A directory holding hazy/ is read
/// as a phantom set, with clean/ and masks/ picked up as references.
struct InputSet {
    std::vector<std::filesystem::path> images;
    std::filesystem::path clean_dir; // empty when unavailable
    std::filesystem::path masks_dir;
};
InputSet discover_inputs(const std::filesystem::path& input);

/// Quantises to 8 bits exactly as a PNG round trip would.
Raster quantized(const Raster& r);

/// Stable per-image sampling seed.
std::uint64_t image_seed(std::uint64_t run_seed, const std::string& name);

/// Loaded models shared read-only by every image of a job.
struct JobResources {
    const Denoiser* denoiser = nullptr;
    NoiseSchedule schedule;
    std::string denoiser_digest;
    const RegionSegmenter* segmenter = nullptr; // null: oracle from the reference masks
    std::string segmenter_digest = "oracle";
};

enum class ItemStatus { completed, skipped, failed };
std::string to_string(ItemStatus s);

struct JobItem {
    std::string name;
    ItemStatus status = ItemStatus::completed;
    std::string error;
    std::optional<MetricReport> metrics;
};

struct JobSummary {
    std::vector<JobItem> items;
    std::optional<MetricReport> aggregate;

    int failed() const;
    int skipped() const;
};

/// One line per record with a fixed field order:
/// name=... cnr=... gcnr=... ks_septum=... ks_ventricle=... kid=... final_score=...
std::string format_report_line(const std::string& name, const MetricReport& r);
std::optional<MetricReport> parse_report_line(const std::string& line, std::string* name = nullptr);

/// segment -> compose guidance -> dehaze -> evaluate -> persist, per image.
/// Images whose outputs already exist for the same inputs, settings and
/// models are skipped. Failures are recorded and the job continues.
JobSummary run_dehaze_job(const RunConfig& config, const InputSet& inputs, const std::filesystem::path& out_dir,
                          const JobResources& resources);

/// Evaluates already dehazed images against references.
JobSummary evaluate_directory(const std::filesystem::path& dehazed_dir, const std::filesystem::path& reference_dir,
                              const std::filesystem::path& hazy_dir, const std::filesystem::path& masks_dir,
                              const MetricSettings& settings);

/// Guidance map for one image: learned segmenter when given, else the mask oracle.
GuidanceMap guidance_for(const Raster& hazy, const RunConfig& config, const RegionSegmenter* segmenter,
                         const RoiMasks* masks);

// ---------------------------------------------------------------- sweep

struct ValidationSet {
    std::vector<std::string> names;
    std::vector<Raster> hazy;
    std::vector<Raster> clean;
    std::vector<RoiMasks> masks;

    std::uint64_t content_hash() const;
};

/// Phantom validation set, quantised to 8 bits so that it matches the same
/// set written to and read back from disk.
ValidationSet make_validation_set(const SweepConfig& sweep);
ValidationSet load_validation_set(const InputSet& inputs);

/// Aggregate final score of `config` on the validation set.
MetricReport evaluate_settings(const RunConfig& config, const ValidationSet& set, const JobResources& resources);

enum class TrialStatus { completed, failed };

struct SweepTrial {
    int trial_id = 0;
    std::vector<std::pair<std::string, double>> sampled_params;
    double objective = 0.0;
    TrialStatus status = TrialStatus::completed;
    std::string error;
};

struct SweepResult {
    std::vector<SweepTrial> trials;
    int best = -1; // index into trials
    std::uint64_t validation_hash = 0;
};

/// Seeded parameter draws; trial 0 holds the incumbent values from `config`.
std::vector<std::vector<std::pair<std::string, double>>> sweep_suggestions(const RunConfig& config);

/// Random search. With a non-empty `out_dir`, each trial is persisted as it
/// finishes and reused on restart, and the full table and best trial are written.
SweepResult run_sweep(const RunConfig& config, const ValidationSet& set, const JobResources& resources,
                      const std::filesystem::path& out_dir = {});

} // namespace dehaze
