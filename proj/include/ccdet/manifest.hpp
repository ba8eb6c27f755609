#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ccdet/common.hpp"

namespace ccdet {

// Hex SHA-256 of a byte range / string / file.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);

// Content-addressed artifact ids in git's SHA-256 object format:
// sha256("blob <size>\0" + content). These match `git hash-object` inside a
// repository initialized with --object-format=sha256.
std::string git_blob_id(const std::string& content);
std::string git_blob_id_file(const std::string& path);

// Digest of a dataset directory: every regular file, listed as
// "<blob id>  <relative path>\n" sorted by path, hashed as one stream.
std::string hash_dataset_dir(const std::string& dir);

// Record of one CLI invocation, written as run_manifest.json next to the
// command's outputs. Reruns that produce an equal manifest (command, resolved
// config, dataset hash, artifact ids) produced identical artifacts, since the
// ids are content hashes.
struct RunManifest {
    std::string command;                                          // reconstructed argv
    nlohmann::json config;                                        // resolved config, or null
    std::string dataset_hash;                                     // empty when no dataset is read
    std::vector<std::pair<std::string, std::string>> artifacts;   // (path, blob id)
    double wall_seconds = 0;

    // Computes the blob id of the file at fs_path and records it under the
    // (typically relative) display path.
    void add_artifact(const std::string& display_path, const std::string& fs_path);
    nlohmann::json to_json() const;
    void write(const std::string& path) const;
};

}  // namespace ccdet
