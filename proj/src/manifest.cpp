#include "ccdet/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <openssl/evp.h>

namespace fs = std::filesystem;

namespace ccdet {

namespace {

struct Sha256 {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), EVP_MD_CTX_free};

    Sha256() {
        if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
            throw IoError("cannot initialize SHA-256 digest");
    }
    void update(const void* data, std::size_t len) {
        if (EVP_DigestUpdate(ctx.get(), data, len) != 1)
            throw IoError("SHA-256 digest update failed");
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int md_len = 0;
        if (EVP_DigestFinal_ex(ctx.get(), md, &md_len) != 1)
            throw IoError("SHA-256 digest finalization failed");
        static const char* digits = "0123456789abcdef";
        std::string out;
        out.reserve(2 * md_len);
        for (unsigned int i = 0; i < md_len; ++i) {
            out.push_back(digits[md[i] >> 4]);
            out.push_back(digits[md[i] & 0xf]);
        }
        return out;
    }
};

std::string read_file_bytes(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open file for hashing: " + path);
    std::ostringstream buf;
    buf << file.rdbuf();
    return buf.str();
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.hex();
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string sha256_file(const std::string& path) { return sha256_hex(read_file_bytes(path)); }

std::string git_blob_id(const std::string& content) {
    Sha256 h;
    h.update("blob " + std::to_string(content.size()));
    h.update("\0", 1);
    h.update(content);
    return h.hex();
}

std::string git_blob_id_file(const std::string& path) { return git_blob_id(read_file_bytes(path)); }

std::string hash_dataset_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir);
    std::vector<std::string> rel_paths;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            rel_paths.push_back(fs::relative(entry.path(), dir).generic_string());
    std::sort(rel_paths.begin(), rel_paths.end());
    Sha256 h;
    for (const auto& rel : rel_paths)
        h.update(git_blob_id_file((fs::path(dir) / rel).string()) + "  " + rel + "\n");
    return h.hex();
}

void RunManifest::add_artifact(const std::string& display_path, const std::string& fs_path) {
    artifacts.emplace_back(display_path, git_blob_id_file(fs_path));
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config"] = config;
    j["dataset_hash"] = dataset_hash;
    nlohmann::ordered_json arts = nlohmann::ordered_json::array();
    for (const auto& [path, id] : artifacts) arts.push_back({{"path", path}, {"id", id}});
    j["artifacts"] = arts;
    j["wall_seconds"] = wall_seconds;
    return j;
}

void RunManifest::write(const std::string& path) const {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw IoError("cannot write run manifest: " + path);
    file << to_json().dump(2) << "\n";
    if (!file) throw IoError("short write saving run manifest: " + path);
}

}  // namespace ccdet
