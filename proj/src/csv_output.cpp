#include "residual_lab/csv_output.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#ifndef RESIDUAL_LAB_VERSION
#define RESIDUAL_LAB_VERSION "unknown"
#endif

namespace rlab {

void CsvTable::add_row(std::vector<std::string> row) {
    if (row.size() != header.size()) {
        throw std::invalid_argument("csv row has " + std::to_string(row.size()) + " fields, header has " +
                                    std::to_string(header.size()));
    }
    rows.push_back(std::move(row));
}

std::string CsvTable::body() const {
    std::string out;
    auto emit = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ',';
            out += cells[i];
        }
        out += '\n';
    };
    emit(header);
    for (const auto& r : rows) emit(r);
    return out;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string hash8(const nlohmann::json& config) {
    std::uint32_t h = 2166136261u;
    for (unsigned char c : config.dump()) {
        h ^= c;
        h *= 16777619u;
    }
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", h);
    return buf;
}

std::string output_filename(const std::string& command, std::uint64_t seed,
                            const nlohmann::json& config) {
    return command + "-" + std::to_string(seed) + "-" + hash8(config) + ".csv";
}

std::string library_version() { return RESIDUAL_LAB_VERSION; }

void write_csv(const std::filesystem::path& path, const CsvTable& table, nlohmann::json metadata) {
    metadata["version"] = library_version();
    const auto now = std::chrono::system_clock::now();
    metadata["timestamp"] =
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "# " << metadata.dump() << '\n' << table.body();
    out.close();
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_csv_body(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    std::string s = ss.str();
    if (s.rfind("# ", 0) == 0) {
        const auto nl = s.find('\n');
        s = nl == std::string::npos ? std::string() : s.substr(nl + 1);
    }
    return s;
}

} // namespace rlab
