#include "icumort/manifest.hpp"
#include "icumort/errors.hpp"
#include "icumort/rng.hpp"

#include <fmt/core.h>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace icumort {

namespace {
constexpr const char* kVersion = "0.3.0";

std::string basename_of(const std::string& path) {
    return std::filesystem::path(path).filename().string();
}
} // namespace

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error(fmt::format("cannot open file for hashing: {}", path));
    // FNV-style mix over 8-byte words (byte-exact tail), fast enough for the
    // multi-megabyte intermediates that get re-verified on every command
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::uint64_t total = 0;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::size_t n = static_cast<std::size_t>(in.gcount());
        total += n;
        std::size_t i = 0;
        for (; i + 8 <= n; i += 8) {
            std::uint64_t w;
            std::memcpy(&w, buf + i, 8);
            h ^= w;
            h *= 0x100000001b3ULL;
            h ^= h >> 29;
        }
        for (; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    h ^= total;
    h *= 0x100000001b3ULL;
    return h;
}

std::string hash_hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

json Manifest::to_json() const {
    json j;
    j["tool"] = tool;
    j["version"] = version;
    j["command"] = command;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["inputs"] = inputs;
    j["output_hash"] = output_hash;
    return j;
}

Manifest Manifest::from_json(const json& j) {
    Manifest m;
    m.tool = j.value("tool", "");
    m.version = j.value("version", "");
    m.command = j.value("command", "");
    m.seed = j.value("seed", std::uint64_t{0});
    m.config_hash = j.value("config_hash", "");
    if (j.contains("inputs")) m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.output_hash = j.value("output_hash", "");
    return m;
}

std::string manifest_path_for(const std::string& artifact_path) {
    return artifact_path + ".manifest.json";
}

void write_manifest(const std::string& artifact_path, const std::string& command,
                    std::uint64_t seed, const std::string& config_hash,
                    const std::vector<std::string>& input_paths) {
    Manifest m;
    m.version = kVersion;
    m.command = command;
    m.seed = seed;
    m.config_hash = config_hash;
    for (const auto& p : input_paths) {
        m.inputs[basename_of(p)] = hash_hex(hash_file(p));
    }
    m.output_hash = hash_hex(hash_file(artifact_path));
    save_json_file(manifest_path_for(artifact_path), m.to_json());
}

void verify_manifest(const std::string& artifact_path) {
    const std::string mpath = manifest_path_for(artifact_path);
    if (!std::filesystem::exists(mpath)) {
        throw data_error(fmt::format(
            "{}: no manifest found ({}); refusing unmanifested input. "
            "Re-run the command that produces this artifact.",
            artifact_path, mpath));
    }
    Manifest m = Manifest::from_json(load_json_file(mpath));
    const std::string actual = hash_hex(hash_file(artifact_path));
    if (actual != m.output_hash) {
        throw data_error(fmt::format(
            "{}: content hash {} does not match manifest hash {}; the artifact is stale or was "
            "edited. Re-run '{}' to regenerate it.",
            artifact_path, actual, m.output_hash, m.command));
    }
}

void verify_manifest_chain(const std::string& artifact_path) {
    verify_manifest(artifact_path);
    const Manifest m = Manifest::from_json(load_json_file(manifest_path_for(artifact_path)));
    const std::filesystem::path dir = std::filesystem::path(artifact_path).parent_path();
    for (const auto& [name, recorded] : m.inputs) {
        const std::filesystem::path input = dir / name;
        if (!std::filesystem::exists(input)) continue;
        const std::string actual = hash_hex(hash_file(input.string()));
        if (actual != recorded) {
            throw data_error(fmt::format(
                "{}: upstream input {} changed since this artifact was produced (hash {} vs "
                "recorded {}); re-run '{}' first.",
                artifact_path, input.string(), actual, recorded, m.command));
        }
    }
}

} // namespace icumort
