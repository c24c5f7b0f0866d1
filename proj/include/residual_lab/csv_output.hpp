#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rlab {

// A table destined for one CSV file. Cells are preformatted strings.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> row);
    // Header line plus rows, each terminated by '\n'. No metadata.
    std::string body() const;
};

// Shortest round-trip decimal for a double ("nan", "inf", "-inf" for specials).
std::string format_double(double v);

// 32-bit FNV-1a of the compact JSON dump, as 8 lowercase hex digits.
std::string hash8(const nlohmann::json& config);

// <command>-<seed>-<hash8(config)>.csv
std::string output_filename(const std::string& command, std::uint64_t seed,
                            const nlohmann::json& config);

std::string library_version();

// Writes "# " + metadata JSON on the first line, then the table body. The
// metadata gains "version" and "timestamp" keys. Throws std::runtime_error when
// the file cannot be written.
void write_csv(const std::filesystem::path& path, const CsvTable& table, nlohmann::json metadata);

// Strips the leading metadata line from a file written by write_csv.
std::string read_csv_body(const std::filesystem::path& path);

} // namespace rlab
