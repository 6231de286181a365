// CSV/JSON output helpers. All numeric formatting goes through fmt_double so
// repeated runs with the same config and seed produce byte-identical files.

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace covert {

/// Shortest round-trip decimal representation of a double.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // trim to the shortest form that still round-trips
    for (int prec = 1; prec < 17; ++prec) {
        char shorter[40];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        if (std::strtod(shorter, nullptr) == v) return shorter;
    }
    return buf;
}

/// FNV-1a 64-bit hash; used to stamp outputs with the config they came from.
inline std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string config_hash(const nlohmann::json& config) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

/// Column-oriented CSV writer. Header comment lines record seed + config hash.
class CsvWriter {
  public:
    explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    void stamp(std::uint64_t seed, const std::string& cfg_hash) {
        std::ostringstream os;
        os << "# seed=" << seed << " config_hash=" << cfg_hash << "\n";
        preamble_ = os.str();
    }

    void add_row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_.size())
            throw std::invalid_argument("CsvWriter: cell count does not match header");
        rows_.push_back(cells);
    }

    std::string str() const {
        std::ostringstream os;
        os << preamble_;
        for (std::size_t i = 0; i < columns_.size(); ++i)
            os << (i ? "," : "") << columns_[i];
        os << "\n";
        for (const auto& row : rows_) {
            for (std::size_t i = 0; i < row.size(); ++i)
                os << (i ? "," : "") << row[i];
            os << "\n";
        }
        return os.str();
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + path.string());
        out << str();
    }

  private:
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
    std::string preamble_;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return nlohmann::json::parse(in);
}

} // namespace covert
