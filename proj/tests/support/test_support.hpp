#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>

#include "cellgraph/io.hpp"

namespace cellgraph::testing {

/// Fresh, empty scratch directory under CELLGRAPH_TMP (or the system temp dir).
inline std::filesystem::path scratch_dir(const std::string& name) {
    const char* base = std::getenv("CELLGRAPH_TMP");
    std::filesystem::path dir = base ? std::filesystem::path(base) : std::filesystem::temp_directory_path() / "cellgraph";
    dir /= name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Relative path -> file bytes for every regular file below `root`.
inline std::map<std::string, std::string> snapshot_tree(const std::filesystem::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
        if (entry.is_regular_file()) {
            out[std::filesystem::relative(entry.path(), root).generic_string()] = io::read_file(entry.path());
        }
    }
    return out;
}

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Order-sensitive hash over a directory tree (names and contents).
inline std::uint64_t hash_tree(const std::filesystem::path& root) {
    std::uint64_t h = 0;
    for (const auto& [name, bytes] : snapshot_tree(root)) h = h * 31 + fnv1a(name) * 17 + fnv1a(bytes);
    return h;
}

}  // namespace cellgraph::testing
