#pragma once

#include "icumort/jsonio.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace icumort {

std::uint64_t hash_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

// Every pipeline command writes <output>.manifest.json next to each output:
// the output's own hash, the hashes of the inputs it was derived from, the
// config hash and the seed. Downstream commands refuse stale or hand-edited
// intermediates instead of silently producing untraceable reports.
struct Manifest {
    std::string tool = "icumort";
    std::string version;
    std::string command;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::map<std::string, std::string> inputs;  // path (basename) -> hash
    std::string output_hash;

    json to_json() const;
    static Manifest from_json(const json& j);
};

std::string manifest_path_for(const std::string& artifact_path);

void write_manifest(const std::string& artifact_path, const std::string& command,
                    std::uint64_t seed, const std::string& config_hash,
                    const std::vector<std::string>& input_paths);

// Throws data_error when the manifest is missing, or the artifact/input bytes
// no longer match what the manifest recorded.
void verify_manifest(const std::string& artifact_path);

// verify_manifest plus a recheck of every recorded input that still exists
// next to the artifact, so editing an upstream intermediate is caught even
// when only a downstream artifact is consumed.
void verify_manifest_chain(const std::string& artifact_path);

} // namespace icumort
