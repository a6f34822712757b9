#pragma once

// Run configuration: one versioned JSON document covering every subcommand.
// Resolution order is defaults < config file < command-line overrides; the
// file is checked strictly against the defaults' key set and value types.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mutelab/asr/train.hpp"
#include "mutelab/attack/attack.hpp"
#include "mutelab/audio/corpus.hpp"
#include "mutelab/error.hpp"
#include "mutelab/eval/eval.hpp"

#ifndef MUTELAB_VERSION
#define MUTELAB_VERSION "0.0.0"
#endif
#ifndef MUTELAB_GIT_DESCRIBE
#define MUTELAB_GIT_DESCRIBE "unknown"
#endif

namespace mutelab::cli {

inline constexpr int kConfigSchema = 1;

struct Selection {
    std::string split = "test";
    std::string domain = "clean";
    int limit = 0;
};

struct SaliencyOptions {
    std::size_t step = 1;     // which generated token (1-based)
    std::size_t hop = 160;    // block size of the aggregated series
    int series = 4;           // samples per cohort with a written series
};

struct TransferOptions {
    std::size_t nearest = 5;
};

struct RunConfig {
    std::uint64_t seed = 7;
    CorpusConfig corpus;
    TrainConfig train;
    AttackConfig attack;
    EvalOptions eval;
    Selection selection;
    SaliencyOptions saliency;
    TransferOptions transfer;
};

inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json attack = c.attack;
    attack.erase("seed");
    nlohmann::json eval = c.eval;
    eval["split"] = c.selection.split;
    eval["domain"] = c.selection.domain;
    eval["limit"] = c.selection.limit;
    return {{"schema", kConfigSchema},
            {"seed", c.seed},
            {"corpus", c.corpus},
            {"train", c.train},
            {"attack", attack},
            {"eval", eval},
            {"saliency", {{"step", c.saliency.step}, {"hop", c.saliency.hop}, {"series", c.saliency.series}}},
            {"transfer", {{"nearest", c.transfer.nearest}}}};
}

namespace detail {

inline bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
    if (a.is_number() && b.is_number()) {
        // Integral defaults only accept integral values.
        return !(a.is_number_integer() || a.is_number_unsigned()) || b.is_number_integer() || b.is_number_unsigned();
    }
    return a.type() == b.type();
}

inline std::string type_name(const nlohmann::json& v) {
    if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
    return v.type_name();
}

// Merges `src` into `dst` key by key; every key must already exist in `dst`
// with a compatible type. Arrays are replaced whole.
inline void strict_merge(nlohmann::json& dst, const nlohmann::json& src, const std::string& where) {
    for (auto it = src.begin(); it != src.end(); ++it) {
        const std::string key = where.empty() ? it.key() : where + "." + it.key();
        if (!dst.contains(it.key())) throw SchemaError("unknown config key '" + key + "'");
        auto& target = dst[it.key()];
        if (!same_kind(target, it.value())) {
            throw SchemaError("config key '" + key + "' expects " + type_name(target) + ", got " +
                              type_name(it.value()));
        }
        if (target.is_object()) {
            strict_merge(target, it.value(), key);
        } else {
            target = it.value();
        }
    }
}

inline nlohmann::json& at_path(nlohmann::json& root, const std::string& dotted) {
    nlohmann::json* node = &root;
    std::stringstream ss(dotted);
    for (std::string part; std::getline(ss, part, '.');) {
        if (!node->is_object() || !node->contains(part)) throw SchemaError("unknown config key '" + dotted + "'");
        node = &(*node)[part];
    }
    return *node;
}

}  // namespace detail

// A command-line value for a dotted config key, e.g. {"attack.epsilon", 0.01}.
using Override = std::pair<std::string, nlohmann::json>;

inline RunConfig from_resolved(const nlohmann::json& j) {
    RunConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.corpus = j.at("corpus").get<CorpusConfig>();
        c.train = j.at("train").get<TrainConfig>();
        c.attack = j.at("attack").get<AttackConfig>();
        c.attack.seed = c.seed;
        c.eval = j.at("eval").get<EvalOptions>();
        const auto& e = j.at("eval");
        c.selection = {e.at("split").get<std::string>(), e.at("domain").get<std::string>(), e.at("limit").get<int>()};
        const auto& s = j.at("saliency");
        c.saliency = {s.at("step").get<std::size_t>(), s.at("hop").get<std::size_t>(), s.at("series").get<int>()};
        c.transfer.nearest = j.at("transfer").at("nearest").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("config: ") + e.what());
    }
    return c;
}

struct LoadedConfig {
    RunConfig config;
    nlohmann::json resolved;
};

// `path` may be empty (defaults only). An empty file counts as {}.
inline LoadedConfig load_config(const std::filesystem::path& path, const std::vector<Override>& overrides = {}) {
    nlohmann::json resolved = to_json(RunConfig{});
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ParseError(path.string() + ": cannot open config file");
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        nlohmann::json file = nlohmann::json::object();
        if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
            try {
                file = nlohmann::json::parse(text);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(path.string() + ": " + e.what());
            }
        }
        if (!file.is_object()) throw SchemaError(path.string() + ": config must be a JSON object");
        if (file.contains("schema") && file["schema"] != kConfigSchema) {
            throw SchemaError(path.string() + ": unsupported config schema " + file["schema"].dump() +
                              " (expected " + std::to_string(kConfigSchema) + ")");
        }
        detail::strict_merge(resolved, file, "");
    }
    for (const auto& [key, value] : overrides) {
        auto& slot = detail::at_path(resolved, key);
        if (!detail::same_kind(slot, value)) {
            throw SchemaError("override '" + key + "' expects " + detail::type_name(slot) + ", got " +
                              detail::type_name(value));
        }
        slot = value;
    }
    auto config = from_resolved(resolved);
    return {std::move(config), std::move(resolved)};
}

inline nlohmann::json version_stamp() {
    return {{"version", MUTELAB_VERSION}, {"git_describe", MUTELAB_GIT_DESCRIBE}};
}

// Explicit --out wins; otherwise <root>/<command>-<hash of resolved config>,
// with root from MUTELAB_OUT_ROOT (default "runs").
inline std::filesystem::path run_directory(const std::string& command, const std::string& out,
                                           const nlohmann::json& resolved, const nlohmann::json& inputs) {
    if (!out.empty()) return out;
    const char* env = std::getenv("MUTELAB_OUT_ROOT");
    const std::filesystem::path root = env && *env ? env : "runs";
    return root / (command + "-" + stable_hash(resolved.dump() + inputs.dump()).substr(0, 10));
}

// <dir>/run.json: command, inputs, resolved config and version stamp.
inline void write_run_stamp(const std::filesystem::path& file, const std::string& command,
                            const nlohmann::json& resolved, const nlohmann::json& inputs) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw std::runtime_error(file.string() + ": cannot open for writing");
    out << nlohmann::json{{"command", command}, {"inputs", inputs}, {"config", resolved}, {"build", version_stamp()}}
               .dump(2)
        << '\n';
}

}  // namespace mutelab::cli
