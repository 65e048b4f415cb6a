#include <cmath>
#include <cstdio>
#include <sstream>

#include "dehaze/hash.hpp"
#include "dehaze/pipeline.hpp"

namespace dehaze {

namespace fs = std::filesystem;

namespace {

using Params = std::vector<std::pair<std::string, double>>;

void apply(RunConfig& c, const std::string& key, double v) {
    try {
        set_config_value(c, key, format_real(v));
    } catch (const ConfigError&) {
        // Integer-valued keys take the nearest integer.
        set_config_value(c, key, std::to_string(std::llround(v)));
    }
}

std::string params_text(const Params& p) {
    std::string out;
    for (const auto& [k, v] : p) out += "param." + k + " = " + format_real(v) + "\n";
    return out;
}

std::string hex(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string trial_text(const SweepTrial& t, const std::string& key) {
    std::string s = "trial = " + std::to_string(t.trial_id) + "\n";
    s += "key = " + key + "\n";
    s += std::string("status = ") + (t.status == TrialStatus::completed ? "completed" : "failed") + "\n";
    s += "objective = " + format_real(t.objective) + "\n";
    if (!t.error.empty()) s += "error = " + t.error + "\n";
    return s + params_text(t.sampled_params);
}

std::optional<SweepTrial> parse_trial(const std::string& text, const std::string& key, int id, const Params& params) {
    std::istringstream in(text);
    bool key_ok = false, have_status = false;
    SweepTrial t{id, params, 0.0, TrialStatus::completed, ""};
    for (std::string l; std::getline(in, l);) {
        const auto eq = l.find(" = ");
        if (eq == std::string::npos) continue;
        const std::string k = l.substr(0, eq), v = l.substr(eq + 3);
        if (k == "key") key_ok = v == key;
        if (k == "status") {
            have_status = true;
            t.status = v == "completed" ? TrialStatus::completed : TrialStatus::failed;
        }
        if (k == "objective") t.objective = std::stod(v);
        if (k == "error") t.error = v;
    }
    if (!key_ok || !have_status) return std::nullopt;
    return t;
}

} // namespace

std::vector<Params> sweep_suggestions(const RunConfig& config) {
    config.sweep.validate();
    Rng rng(derive_seed(config.seed, fnv1a("sweep")));
    std::vector<Params> out;
    Params incumbent;
    for (const SweepParam& p : config.sweep.params)
        incumbent.emplace_back(p.key, std::stod(get_config_value(config, p.key)));
    out.push_back(incumbent);
    for (int t = 1; t < config.sweep.trials; ++t) {
        Params draw;
        for (const SweepParam& p : config.sweep.params) {
            const double u = rng.uniform();
            const double v = p.log_scale ? std::exp(std::log(p.low) + u * (std::log(p.high) - std::log(p.low)))
                                         : p.low + u * (p.high - p.low);
            draw.emplace_back(p.key, std::clamp(v, p.low, p.high));
        }
        out.push_back(std::move(draw));
    }
    return out;
}

SweepResult run_sweep(const RunConfig& config, const ValidationSet& set, const JobResources& res,
                      const fs::path& out_dir) {
    config.validate();
    RunConfig base = config;
    if (config.sweep.steps > 0) base.guidance.steps = config.sweep.steps;

    SweepResult result;
    result.validation_hash = set.content_hash();
    const std::string base_text = to_text(base);
    if (!out_dir.empty()) fs::create_directories(out_dir / "trials");

    const auto suggestions = sweep_suggestions(config);
    for (std::size_t i = 0; i < suggestions.size(); ++i) {
        const int id = static_cast<int>(i);
        const Params& params = suggestions[i];
        const std::string key = hex(Fnv1a()
                                        .text(base_text)
                                        .text(hex(result.validation_hash))
                                        .text(res.denoiser_digest)
                                        .text(res.segmenter_digest)
                                        .text(params_text(params))
                                        .digest());
        char fname[32];
        std::snprintf(fname, sizeof fname, "%04d.txt", id);
        const fs::path trial_file = out_dir.empty() ? fs::path() : out_dir / "trials" / fname;

        if (!trial_file.empty() && fs::exists(trial_file)) {
            if (auto t = parse_trial(read_file(trial_file), key, id, params)) {
                result.trials.push_back(*t);
                continue;
            }
        }
        SweepTrial trial{id, params, std::nan(""), TrialStatus::completed, ""};
        try {
            RunConfig c = base;
            for (const auto& [k, v] : params) apply(c, k, v);
            trial.objective = evaluate_settings(c, set, res).final_score;
            if (!std::isfinite(trial.objective)) throw NumericalError("objective is not finite");
        } catch (const std::exception& e) {
            trial.status = TrialStatus::failed;
            trial.objective = std::nan("");
            trial.error = e.what();
        }
        if (!trial_file.empty()) write_file_atomic(trial_file, trial_text(trial, key));
        result.trials.push_back(std::move(trial));
    }

    for (std::size_t i = 0; i < result.trials.size(); ++i) {
        const SweepTrial& t = result.trials[i];
        if (t.status != TrialStatus::completed) continue;
        if (result.best < 0 || t.objective > result.trials[static_cast<std::size_t>(result.best)].objective)
            result.best = static_cast<int>(i);
    }

    if (!out_dir.empty()) {
        std::string table = "trial\tstatus\tobjective";
        for (const SweepParam& p : config.sweep.params) table += "\t" + p.key;
        table += "\n";
        for (const SweepTrial& t : result.trials) {
            table += std::to_string(t.trial_id) + "\t" + (t.status == TrialStatus::completed ? "completed" : "failed") +
                     "\t" + format_real(t.objective);
            for (const auto& kv : t.sampled_params) table += "\t" + format_real(kv.second);
            table += "\n";
        }
        write_file_atomic(out_dir / "sweep.tsv", table);
        std::string best = "validation_hash = " + hex(result.validation_hash) + "\n";
        if (result.best >= 0) {
            const SweepTrial& b = result.trials[static_cast<std::size_t>(result.best)];
            best += "best_trial = " + std::to_string(b.trial_id) + "\nobjective = " + format_real(b.objective) + "\n" +
                    params_text(b.sampled_params);
        } else {
            best += "best_trial = none\n";
        }
        write_file_atomic(out_dir / "best.txt", best);
    }
    return result;
}

} // namespace dehaze
