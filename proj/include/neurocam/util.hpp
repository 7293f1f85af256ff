#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace neurocam {

std::string trim_copy(const std::string& s);
std::vector<std::string> split(const std::string& s, char delim);
std::string join(const std::vector<std::string>& parts, const std::string& sep);
std::string lower_copy(const std::string& s);

std::vector<std::string> read_lines(const std::string& path);
std::string read_file(const std::string& path);
std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file(const std::string& path, const std::string& content);

std::string sha256_hex(const std::uint8_t* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file_hex(const std::string& path);

}  // namespace neurocam
