#include "tractorc/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace tractorc::io {

namespace {

static_assert(std::endian::native == std::endian::little, "TCK codec assumes a little-endian host");

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

void append_float(std::string& out, float v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

}  // namespace

TckError::TckError(const std::string& what, std::size_t byte_offset)
    : IoError("TCK: " + what + " (byte " + std::to_string(byte_offset) + ")"), offset_(byte_offset) {}

LabelError::LabelError(const std::string& what, std::size_t line)
    : IoError("labels: " + what + " (line " + std::to_string(line) + ")"), line_(line) {}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

// ---- TCK ----------------------------------------------------------------------

Tractogram parse_tck(std::string_view bytes) {
    std::size_t pos = 0;
    bool saw_end = false;
    std::string datatype;
    std::size_t data_offset = 0;
    bool have_offset = false;
    std::size_t line_no = 0;
    while (pos < bytes.size()) {
        const std::size_t eol = bytes.find('\n', pos);
        if (eol == std::string_view::npos) break;
        const std::string line = trim(bytes.substr(pos, eol - pos));
        const std::size_t line_start = pos;
        pos = eol + 1;
        if (line_no++ == 0) {
            if (line != "mrtrix tracks") throw TckError("missing 'mrtrix tracks' magic line", line_start);
            continue;
        }
        if (line == "END") {
            saw_end = true;
            break;
        }
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = trim(std::string_view(line).substr(0, colon));
        const std::string value = trim(std::string_view(line).substr(colon + 1));
        if (key == "datatype") {
            datatype = value;
        } else if (key == "file") {
            std::istringstream ss(value);
            std::string dot;
            ss >> dot >> data_offset;
            if (dot != "." || !ss) throw TckError("unsupported 'file' field '" + value + "'", line_start);
            have_offset = true;
        }
    }
    if (!saw_end) throw TckError("header has no END line", pos);
    if (datatype != "Float32LE") {
        throw TckError("unsupported datatype '" + (datatype.empty() ? std::string("<missing>") : datatype) + "'", 0);
    }
    if (!have_offset) data_offset = pos;
    if (data_offset < pos || data_offset > bytes.size()) throw TckError("data offset outside file", data_offset);

    Tractogram t;
    Streamline current;
    std::size_t at = data_offset;
    for (;;) {
        if (at == bytes.size()) throw TckError("float stream ends without Inf terminator", at);
        if (at + 12 > bytes.size()) throw TckError("truncated float triplet", at);
        float xyz[3];
        std::memcpy(xyz, bytes.data() + at, 12);
        if (std::isinf(xyz[0]) && std::isinf(xyz[1]) && std::isinf(xyz[2])) break;
        if (std::isnan(xyz[0]) && std::isnan(xyz[1]) && std::isnan(xyz[2])) {
            if (!current.points.empty()) t.streamlines.push_back(std::move(current));
            current = {};
        } else {
            current.points.emplace_back(xyz[0], xyz[1], xyz[2]);
        }
        at += 12;
    }
    if (!current.points.empty()) t.streamlines.push_back(std::move(current));
    return t;
}

std::string encode_tck(const Tractogram& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto& s = t.streamlines[i];
        if (s.size() < 2) throw IoError("streamline " + std::to_string(i) + " has fewer than 2 points");
        for (const auto& p : s.points) {
            if (!p.allFinite()) throw IoError("streamline " + std::to_string(i) + " has non-finite coordinates");
        }
    }
    auto header_for = [&](std::size_t offset) {
        return "mrtrix tracks\ndatatype: Float32LE\ncount: " + std::to_string(t.size()) + "\nfile: . " +
               std::to_string(offset) + "\nEND\n";
    };
    // the offset's own digit count feeds back into the header length
    std::size_t offset = header_for(0).size();
    while (header_for(offset).size() != offset) offset = header_for(offset).size();

    std::string out = header_for(offset);
    out.reserve(offset + 12 * (t.point_count() + t.size() + 1));
    const float nan = std::numeric_limits<float>::quiet_NaN();
    const float inf = std::numeric_limits<float>::infinity();
    for (const auto& s : t.streamlines) {
        for (const auto& p : s.points) {
            append_float(out, static_cast<float>(p.x()));
            append_float(out, static_cast<float>(p.y()));
            append_float(out, static_cast<float>(p.z()));
        }
        for (int k = 0; k < 3; ++k) append_float(out, nan);
    }
    for (int k = 0; k < 3; ++k) append_float(out, inf);
    return out;
}

Tractogram read_tck(const std::filesystem::path& path) { return parse_tck(read_file(path)); }

void write_tck(const Tractogram& t, const std::filesystem::path& path) { write_file_atomic(path, encode_tck(t)); }

// ---- labels -------------------------------------------------------------------

std::vector<int> parse_labels(std::string_view text) {
    std::vector<int> out;
    std::size_t pos = 0;
    std::size_t line = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        ++line;
        const std::string tok = trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        if (tok.empty()) {
            if (pos >= text.size()) break;
            throw LabelError("empty line", line);
        }
        int v = 0;
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || ptr != tok.data() + tok.size()) throw LabelError("not an integer: '" + tok + "'", line);
        out.push_back(v);
    }
    return out;
}

std::string encode_labels(const std::vector<int>& labels) {
    std::string out;
    for (int v : labels) {
        out += std::to_string(v);
        out += '\n';
    }
    return out;
}

std::vector<int> read_labels(const std::filesystem::path& path) { return parse_labels(read_file(path)); }

void write_labels(const std::vector<int>& labels, const std::filesystem::path& path) {
    write_file_atomic(path, encode_labels(labels));
}

std::vector<std::filesystem::path> list_tck(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".tck") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace tractorc::io
