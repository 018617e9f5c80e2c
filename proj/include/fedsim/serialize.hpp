#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fedsim/datagen.hpp"
#include "fedsim/model.hpp"

namespace fedsim {

// Checkpoints are self-describing JSON: arch/variant/seed-lineage plus one
// entry per tensor (name, role, shape, base64 little-endian doubles).
// Round-trips are bit-exact.
std::string checkpoint_to_json(const ModelState& state);
ModelState checkpoint_from_json(const std::string& text);
void checkpoint_save(const std::filesystem::path& path, const ModelState& state);
ModelState checkpoint_load(const std::filesystem::path& path);

// Shard dumps are flat binary (header + raw doubles), one file per shard,
// with a text manifest listing every file.
void shard_save(const std::filesystem::path& path, const Shard& shard);
Shard shard_load(const std::filesystem::path& path);

struct ManifestEntry {
    std::string file;
    std::size_t domain_id = 0;
    std::string split;
    std::size_t count = 0;
};
void manifest_save(const std::filesystem::path& path,
                   const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> manifest_load(const std::filesystem::path& path);

std::string base64_encode(const unsigned char* data, std::size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace fedsim
