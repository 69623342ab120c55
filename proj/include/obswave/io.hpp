#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "obswave/errors.hpp"
#include "obswave/grid.hpp"
#include "obswave/operators.hpp"

namespace obswave {

/// Shortest text that reads back to the same double (17 significant digits).
inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// CSV with a fixed header; every double goes through fmt().
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw Error(ErrorKind::MissingArtifact, "cannot write " + path.string());
        cols_ = header.size();
        write_cells(header);
    }

    template <class... Cells>
    void row(const Cells&... cells) {
        static_assert(sizeof...(Cells) > 0);
        std::vector<std::string> v{cell(cells)...};
        if (v.size() != cols_) throw Error(ErrorKind::InvalidParameters, path_.string() + ": row width differs from header");
        write_cells(v);
    }

    void cells(const std::vector<std::string>& v) {
        if (v.size() != cols_) throw Error(ErrorKind::InvalidParameters, path_.string() + ": row width differs from header");
        write_cells(v);
    }

    const std::filesystem::path& path() const { return path_; }
    void close() { out_.close(); }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::size_t cols_ = 0;

    static std::string cell(double x) { return fmt(x); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    template <class I>
    static std::enable_if_t<std::is_integral_v<I>, std::string> cell(I i) { return std::to_string(i); }

    void write_cells(const std::vector<std::string>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) out_ << (i ? "," : "") << v[i];
        out_ << '\n';
    }
};

/// Flat key=value section, one pair per line in insertion order.
class KeyValue {
public:
    KeyValue& add(const std::string& k, double v) { return put(k, fmt(v)); }
    KeyValue& add(const std::string& k, const std::string& v) { return put(k, v); }
    KeyValue& add(const std::string& k, const char* v) { return put(k, v); }
    KeyValue& add(const std::string& k, bool v) { return put(k, v ? "true" : "false"); }
    template <class I>
    std::enable_if_t<std::is_integral_v<I> && !std::is_same_v<I, bool>, KeyValue&> add(const std::string& k, I v) {
        return put(k, std::to_string(v));
    }

    std::string str() const {
        std::string s;
        for (const auto& [k, v] : items_) s += k + "=" + v + "\n";
        return s;
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error(ErrorKind::MissingArtifact, "cannot write " + path.string());
        out << str();
    }

    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

private:
    std::vector<std::pair<std::string, std::string>> items_;
    KeyValue& put(const std::string& k, std::string v) {
        items_.emplace_back(k, std::move(v));
        return *this;
    }
};

/// Binary layout (little-endian host order):
///   char magic[8] = "OBSWTRJ\0"; u32 version; u32 dim; u32 nx[2]; u32 nt; f64 dt;
///   then for each of the nt+1 levels: z[n], z_t[n] as f64, nodes row-major (x fastest).
struct TrajectoryFile {
    static constexpr char magic[8] = {'O', 'B', 'S', 'W', 'T', 'R', 'J', '\0'};
    static constexpr std::uint32_t version = 1;

    int dim = 1;
    std::array<int, 2> nx{1, 1};
    int nt = 0;
    double dt = 0.0;
    std::vector<std::pair<Vector, Vector>> levels;

    int size() const { return nx[0] * nx[1]; }
};

inline void write_trajectory(const std::filesystem::path& path, const TrajectoryFile& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::MissingArtifact, "cannot write " + path.string());
    if (static_cast<int>(f.levels.size()) != f.nt + 1)
        throw Error(ErrorKind::InvalidParameters, "trajectory file needs nt + 1 levels");
    auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    out.write(TrajectoryFile::magic, 8);
    u32(TrajectoryFile::version);
    u32(static_cast<std::uint32_t>(f.dim));
    u32(static_cast<std::uint32_t>(f.nx[0]));
    u32(static_cast<std::uint32_t>(f.nx[1]));
    u32(static_cast<std::uint32_t>(f.nt));
    out.write(reinterpret_cast<const char*>(&f.dt), sizeof f.dt);
    for (const auto& [z, zt] : f.levels) {
        if (z.size() != f.size() || zt.size() != f.size()) throw Error(ErrorKind::InvalidParameters, "level size differs from nx");
        out.write(reinterpret_cast<const char*>(z.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(z.size())));
        out.write(reinterpret_cast<const char*>(zt.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(zt.size())));
    }
}

inline TrajectoryFile read_trajectory(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingArtifact, "cannot read " + path.string());
    char mg[8];
    in.read(mg, 8);
    if (!in || std::memcmp(mg, TrajectoryFile::magic, 8) != 0) throw Error(ErrorKind::InvalidParameters, path.string() + ": not a trajectory file");
    auto u32 = [&] {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        return v;
    };
    if (u32() != TrajectoryFile::version) throw Error(ErrorKind::InvalidParameters, path.string() + ": unsupported version");
    TrajectoryFile f;
    f.dim = static_cast<int>(u32());
    f.nx[0] = static_cast<int>(u32());
    f.nx[1] = static_cast<int>(u32());
    f.nt = static_cast<int>(u32());
    in.read(reinterpret_cast<char*>(&f.dt), sizeof f.dt);
    for (int k = 0; k <= f.nt; ++k) {
        Vector z(f.size()), zt(f.size());
        in.read(reinterpret_cast<char*>(z.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(f.size())));
        in.read(reinterpret_cast<char*>(zt.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(f.size())));
        if (!in) throw Error(ErrorKind::InvalidParameters, path.string() + ": truncated payload");
        f.levels.emplace_back(std::move(z), std::move(zt));
    }
    return f;
}

/// Reads a CSV written by CsvWriter into header + rows of cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw Error(ErrorKind::MissingArtifact, "column '" + name + "' not found");
    }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingArtifact, "cannot read " + path.string());
    CsvTable t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string c;
        while (std::getline(ss, c, ',')) out.push_back(c);
        return out;
    };
    if (std::getline(in, line)) t.header = split(line);
    while (std::getline(in, line))
        if (!line.empty()) t.rows.push_back(split(line));
    return t;
}

} // namespace obswave
