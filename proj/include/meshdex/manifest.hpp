#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace meshdex {

std::string sha256_hex(std::string_view bytes);
/// Throws DataError when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

struct ManifestEntry {
    std::string label;  // path as given, or the artifact name inside the out dir
    std::string hash;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
    std::string stage;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> inputs;
    std::vector<ManifestEntry> outputs;
    std::string config;  // snapshot text

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

/// Hashes the files now. Output labels are taken relative to `out_dir`.
Manifest make_manifest(std::string stage, std::uint64_t seed, const std::vector<std::filesystem::path>& inputs,
                       const std::vector<std::filesystem::path>& outputs, const std::filesystem::path& out_dir,
                       std::string config);

std::string format_manifest(const Manifest& m);
Manifest parse_manifest(std::string_view text);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// True when `path` holds a manifest for the same stage, seed, config and
/// input hashes, and every recorded output still has its recorded hash.
bool manifest_current(const std::filesystem::path& path, const Manifest& expected_inputs,
                      const std::filesystem::path& out_dir);

}  // namespace meshdex
