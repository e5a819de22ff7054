#pragma once

// File formats: TCK tractograms, label sidecars, and shared file helpers.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tractorc/geometry.hpp"

namespace tractorc::io {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// TCK parse failure; the message names the byte offset.
class TckError : public IoError {
public:
    TckError(const std::string& what, std::size_t byte_offset);
    std::size_t byte_offset() const { return offset_; }

private:
    std::size_t offset_;
};

class LabelError : public IoError {
public:
    LabelError(const std::string& what, std::size_t line);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to `path.tmp` and renames over `path`, so readers never observe a
/// partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// TCK: text header of `key: value` lines closed by `END`, float32 LE triplets
// from the `file: . <offset>` byte offset, NaN triplet after each streamline,
// Inf triplet terminating the stream.
Tractogram parse_tck(std::string_view bytes);
std::string encode_tck(const Tractogram& t);
Tractogram read_tck(const std::filesystem::path& path);
void write_tck(const Tractogram& t, const std::filesystem::path& path);

std::vector<int> parse_labels(std::string_view text);
std::string encode_labels(const std::vector<int>& labels);
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::vector<int>& labels, const std::filesystem::path& path);

/// All `*.tck` files in a directory, sorted by file name.
std::vector<std::filesystem::path> list_tck(const std::filesystem::path& dir);

}  // namespace tractorc::io
