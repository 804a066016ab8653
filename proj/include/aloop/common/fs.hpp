#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "aloop/common/error.hpp"

namespace aloop::fs {

namespace stdfs = std::filesystem;

inline std::string read_text(const stdfs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Write via a sibling temp file and rename, so readers never observe a partial file.
inline void write_atomic(const stdfs::path& p, std::string_view content) {
    if (p.has_parent_path()) stdfs::create_directories(p.parent_path());
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    stdfs::rename(tmp, p);
}

inline nlohmann::json read_json(const stdfs::path& p) {
    try {
        return nlohmann::json::parse(read_text(p));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(p.string() + ": " + e.what());
    }
}

inline void write_json(const stdfs::path& p, const nlohmann::json& j) {
    write_atomic(p, j.dump(2) + "\n");
}

}  // namespace aloop::fs
