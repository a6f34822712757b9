#pragma once

// Checkpoint layout:
//   8 bytes   magic "MLCKPT\0\1"
//   u32 LE    header length H
//   H bytes   JSON header {format_version, config, vocab, params:[{name,shape}], meta}
//   blob      float32 little-endian, parameters in header order

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mutelab/asr/model.hpp"

namespace mutelab {

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'L', 'C', 'K', 'P', 'T', '\0', '\1'};
inline constexpr int kCheckpointFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline void save_checkpoint(const AsrModel& model, const std::filesystem::path& path,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    nlohmann::json header;
    header["format_version"] = kCheckpointFormatVersion;
    header["config"] = model.config();
    header["vocab"] = model.vocab().to_json();
    header["meta"] = meta;
    auto params = nlohmann::json::array();
    const auto named = model.named_parameters();
    for (const auto& [name, t] : named) params.push_back({{"name", name}, {"shape", t.shape()}});
    header["params"] = params;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    const auto len = static_cast<std::uint32_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : named) {
        out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

struct LoadedCheckpoint {
    AsrModel model;
    nlohmann::json meta;
};

inline LoadedCheckpoint load_checkpoint_with_meta(const std::filesystem::path& path) {
    const std::string where = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(where + ": cannot open checkpoint");
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kCheckpointMagic) throw ParseError(where + ": bad magic, not a checkpoint");
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1u << 26)) throw ParseError(where + ": bad header length");
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) throw ParseError(where + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(where + ": header is not valid JSON: " + e.what());
    }
    try {
        const int version = header.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion) {
            throw SchemaError(where + ": unsupported format_version " + std::to_string(version));
        }
        const auto config = header.at("config").get<ModelConfig>();
        const Vocab vocab = Vocab::from_json(header.at("vocab"));
        if (vocab.word_count() != config.vocab_words) throw SchemaError(where + ": vocab does not match config");
        AsrModel model(config, 0);
        auto named = model.named_parameters();
        const auto& params = header.at("params");
        if (params.size() != named.size()) {
            throw SchemaError(where + ": expected " + std::to_string(named.size()) + " parameters, header lists " +
                              std::to_string(params.size()));
        }
        for (std::size_t i = 0; i < named.size(); ++i) {
            const auto name = params[i].at("name").get<std::string>();
            const auto shape = params[i].at("shape").get<Shape>();
            if (name != named[i].first || shape != named[i].second.shape()) {
                throw SchemaError(where + ": parameter " + std::to_string(i) + " is " + name + shape_str(shape) +
                                  ", expected " + named[i].first + shape_str(named[i].second.shape()));
            }
            auto dst = named[i].second.mutable_data();
            in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(float)));
            if (!in) throw ParseError(where + ": truncated weights at " + name);
        }
        in.peek();
        if (!in.eof()) throw ParseError(where + ": trailing bytes after weights");
        model.set_trainable(false);
        return {std::move(model), header.value("meta", nlohmann::json::object())};
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(where + ": malformed header: " + e.what());
    }
}

inline AsrModel load_checkpoint(const std::filesystem::path& path) {
    return std::move(load_checkpoint_with_meta(path).model);
}

}  // namespace mutelab
