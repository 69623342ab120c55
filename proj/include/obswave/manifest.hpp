#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "obswave/config.hpp"
#include "obswave/errors.hpp"

#ifndef OBSWAVE_VERSION
#define OBSWAVE_VERSION "0.0.0"
#endif

namespace obswave {

inline std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingArtifact, "cannot read " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

inline std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct ManifestEntry {
    std::string file;  // relative to the output directory
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct RunManifest {
    std::string subcommand;
    std::string version = OBSWAVE_VERSION;
    std::string started;
    std::string finished;
    int exit_code = 0;
    Json config;
    std::vector<ManifestEntry> outputs;

    static constexpr const char* filename = "manifest.json";

    void add(const std::filesystem::path& dir, const std::filesystem::path& file) {
        const auto rel = std::filesystem::relative(file, dir).generic_string();
        for (const auto& e : outputs)
            if (e.file == rel) return;
        outputs.push_back({rel, sha256_file(file), std::filesystem::file_size(file)});
    }

    Json to_json() const {
        Json j;
        j["subcommand"] = subcommand;
        j["version"] = version;
        j["started"] = started;
        j["finished"] = finished;
        j["exit_code"] = exit_code;
        j["config"] = config;
        j["outputs"] = Json::array();
        for (const auto& e : outputs) j["outputs"].push_back({{"file", e.file}, {"sha256", e.sha256}, {"bytes", e.bytes}});
        return j;
    }

    void write(const std::filesystem::path& dir) const {
        std::ofstream out(dir / filename, std::ios::binary);
        if (!out) throw Error(ErrorKind::MissingArtifact, "cannot write manifest in " + dir.string());
        out << to_json().dump(2) << '\n';
    }
};

struct ManifestCheck {
    bool ok = true;
    std::vector<std::string> problems;
};

/// Re-hashes every listed output.
inline ManifestCheck verify_manifest(const std::filesystem::path& dir) {
    const auto path = dir / RunManifest::filename;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingArtifact, "no manifest at " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
    ManifestCheck c;
    for (const auto& e : j.at("outputs")) {
        const auto file = dir / e.at("file").get<std::string>();
        if (!std::filesystem::exists(file)) {
            c.ok = false;
            c.problems.push_back(e.at("file").get<std::string>() + ": missing");
            continue;
        }
        if (sha256_file(file) != e.at("sha256").get<std::string>()) {
            c.ok = false;
            c.problems.push_back(e.at("file").get<std::string>() + ": hash mismatch");
        }
    }
    return c;
}

} // namespace obswave
