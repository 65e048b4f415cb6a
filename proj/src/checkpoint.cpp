#include "dehaze/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "dehaze/raster_io.hpp"

namespace dehaze {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'H', 'Z', 'C', 'K', 'P', 'T', '\0'};

[[noreturn]] void bad(const fs::path& path, const std::string& what) {
    throw IoError(path.string() + ": " + what);
}

} // namespace

void write_checkpoint(const fs::path& path, const json& meta,
                      const std::vector<std::pair<std::string, const nn::ParameterSet*>>& sets) {
    json directory = json::array();
    std::string payload;
    std::uint64_t offset = 0;
    for (const auto& [set_name, set] : sets) {
        for (std::size_t i = 0; i < set->size(); ++i) {
            const nn::Parameter& p = (*set)[i];
            const nn::Shape s = p.value.shape;
            directory.push_back({{"set", set_name},
                                 {"name", p.name},
                                 {"shape", {s.n, s.c, s.h, s.w}},
                                 {"offset", offset}});
            payload.append(reinterpret_cast<const char*>(p.value.data.data()), p.value.data.size() * sizeof(float));
            offset += p.value.data.size();
        }
    }
    const std::string header = json{{"meta", meta}, {"tensors", directory}}.dump();
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t header_len = header.size();
    std::string bytes(kMagic, 8);
    bytes.append(reinterpret_cast<const char*>(&version), 4);
    bytes.append(reinterpret_cast<const char*>(&header_len), 8);
    bytes += header;
    bytes += payload;
    write_file_atomic(path, bytes);
}

CheckpointContents read_checkpoint(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) bad(path, "not a checkpoint (bad magic)");
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    std::memcpy(&header_len, bytes.data() + 12, 8);
    if (version != kCheckpointVersion)
        bad(path, "unsupported checkpoint version " + std::to_string(version));
    if (header_len > bytes.size() - 20) bad(path, "truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(20, header_len));
    } catch (const json::exception& e) {
        bad(path, std::string("malformed header: ") + e.what());
    }
    const std::size_t data_start = 20 + header_len;
    const std::size_t floats = (bytes.size() - data_start) / sizeof(float);
    CheckpointContents out;
    out.meta = header.value("meta", json::object());
    for (const json& t : header.at("tensors")) {
        const auto shape = t.at("shape").get<std::vector<int>>();
        if (shape.size() != 4) bad(path, "tensor shape must have 4 extents");
        const nn::Shape s{shape[0], shape[1], shape[2], shape[3]};
        const auto offset = t.at("offset").get<std::uint64_t>();
        if (offset + s.numel() > floats) bad(path, "tensor " + t.at("name").get<std::string>() + " exceeds payload");
        nn::Tensor value(s);
        std::memcpy(value.data.data(), bytes.data() + data_start + offset * sizeof(float), s.numel() * sizeof(float));
        out.sets[t.at("set").get<std::string>()].add(t.at("name").get<std::string>(), std::move(value));
    }
    return out;
}

json to_json(const TrainConfig& c) {
    return {{"lambda_kid", c.lambda_kid},       {"n_kid", c.n_kid},
            {"ema_decay", c.ema_decay},         {"lr_pretrain", c.lr_pretrain},
            {"lr_finetune", c.lr_finetune},     {"batch_size", c.batch_size},
            {"steps", c.steps},                 {"finetune_steps", c.finetune_steps},
            {"kid_every", c.kid_every},         {"kid_batch", c.kid_batch}, {"kid_in_pretrain", c.kid_in_pretrain},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.lambda_kid = j.value("lambda_kid", c.lambda_kid);
    c.n_kid = j.value("n_kid", c.n_kid);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    c.lr_pretrain = j.value("lr_pretrain", c.lr_pretrain);
    c.lr_finetune = j.value("lr_finetune", c.lr_finetune);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.finetune_steps = j.value("finetune_steps", c.finetune_steps);
    c.kid_every = j.value("kid_every", c.kid_every);
    c.kid_batch = j.value("kid_batch", c.kid_batch);
    c.kid_in_pretrain = j.value("kid_in_pretrain", c.kid_in_pretrain);
    c.seed = j.value("seed", c.seed);
    return c;
}

void save_denoiser(const fs::path& path, const UNetDenoiser& denoiser, const NoiseSchedule& schedule,
                   const TrainConfig& train, const json& extra) {
    const UNetConfig& a = denoiser.config();
    json meta = {{"kind", "denoiser"},
                 {"architecture",
                  {{"name", "unet"},
                   {"base_channels", a.base_channels},
                   {"time_features", a.time_features},
                   {"time_dim", a.time_dim},
                   {"seed", a.seed}}},
                 {"schedule", {{"name", schedule.name()}, {"terminal_alpha", schedule.terminal_alpha()}}},
                 {"data_variance", denoiser.data_variance()},
                 {"train", to_json(train)},
                 {"extra", extra}};
    write_checkpoint(path, meta, {{"theta", &denoiser.parameters()}, {"theta_ema", &denoiser.ema_parameters()}});
}

LoadedDenoiser load_denoiser(const fs::path& path, bool use_ema) {
    CheckpointContents c = read_checkpoint(path);
    if (c.meta.value("kind", "") != "denoiser") bad(path, "checkpoint does not hold a denoiser");
    const json& a = c.meta.at("architecture");
    if (a.value("name", "") != "unet") bad(path, "unknown denoiser architecture");
    UNetConfig cfg;
    cfg.base_channels = a.at("base_channels").get<int>();
    cfg.time_features = a.at("time_features").get<int>();
    cfg.time_dim = a.at("time_dim").get<int>();
    cfg.seed = a.at("seed").get<std::uint64_t>();
    const json& sch = c.meta.at("schedule");
    if (sch.value("name", "") != "cosine") bad(path, "unknown schedule " + sch.value("name", std::string("?")));

    LoadedDenoiser out{std::make_unique<UNetDenoiser>(cfg), NoiseSchedule(sch.at("terminal_alpha").get<double>()),
                       train_config_from_json(c.meta.at("train")), c.meta};
    try {
        out.denoiser->parameters().assign(c.sets.at("theta"));
        out.denoiser->ema_parameters().assign(c.sets.at("theta_ema"));
    } catch (const std::out_of_range&) {
        bad(path, "missing theta or theta_ema");
    } catch (const ContractError& e) {
        bad(path, e.what());
    }
    out.denoiser->set_data_variance(c.meta.at("data_variance").get<double>());
    if (use_ema) out.denoiser->use_ema_weights();
    return out;
}

void save_segmenter(const fs::path& path, const LearnedSegmenter& model, const SegmenterConfig& config,
                    const json& extra) {
    json meta = {{"kind", "segmenter"},
                 {"height", model.height()},
                 {"width", model.width()},
                 {"channels", model.channels()},
                 {"train",
                  {{"learning_rate", config.learning_rate},
                   {"steps", config.steps},
                   {"batch_size", config.batch_size},
                   {"seed", config.seed}}},
                 {"extra", extra}};
    write_checkpoint(path, meta, {{"theta", &model.parameters()}});
}

std::unique_ptr<LearnedSegmenter> load_segmenter(const fs::path& path) {
    CheckpointContents c = read_checkpoint(path);
    if (c.meta.value("kind", "") != "segmenter") bad(path, "checkpoint does not hold a segmenter");
    auto model = std::make_unique<LearnedSegmenter>(c.meta.at("height").get<int>(), c.meta.at("width").get<int>(),
                                                    c.meta.at("channels").get<int>(), 0);
    try {
        model->parameters().assign(c.sets.at("theta"));
    } catch (const std::out_of_range&) {
        bad(path, "missing theta");
    } catch (const ContractError& e) {
        bad(path, e.what());
    }
    return model;
}

} // namespace dehaze
