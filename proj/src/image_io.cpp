#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

#include "dbt/common.hpp"
#include "dbt/imaging.hpp"

namespace dbt {

namespace fs = std::filesystem;

namespace {

constexpr unsigned kMaxVal = 65535;

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            if (!tok.empty()) break;
        } else {
            tok.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return tok;
}

std::size_t parse_header_number(std::istream& in, const fs::path& path, const char* what) {
    const auto tok = next_token(in);
    try {
        std::size_t pos = 0;
        const auto v = std::stoul(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw IoError(path.string() + ": bad PGM " + what + " '" + tok + "'");
    }
}

}  // namespace

void write_pgm(const fs::path& path, const ImageGrid& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "P5\n" << img.width() << ' ' << img.height() << '\n' << kMaxVal << '\n';
    std::string buf;
    buf.reserve(img.size() * 2);
    for (double v : img.data()) {
        const auto q = static_cast<unsigned>(std::clamp(std::nearbyint(v), 0.0, static_cast<double>(kMaxVal)));
        buf.push_back(static_cast<char>((q >> 8) & 0xFF));
        buf.push_back(static_cast<char>(q & 0xFF));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

ImageGrid read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    if (next_token(in) != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
    const auto w = parse_header_number(in, path, "width");
    const auto h = parse_header_number(in, path, "height");
    const auto maxval = parse_header_number(in, path, "maxval");
    if (w == 0 || h == 0 || maxval == 0 || maxval > kMaxVal) throw IoError(path.string() + ": bad PGM header");

    const std::size_t bytes_per = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(w * h * bytes_per);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IoError(path.string() + ": truncated PGM data");

    std::vector<double> data(w * h);
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = bytes_per == 2 ? static_cast<double>((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
    }
    return ImageGrid(w, h, std::move(data));
}

void write_volume(const fs::path& dir, const Volume& vol) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

    nlohmann::json names = nlohmann::json::array();
    for (std::size_t k = 0; k < vol.slice_count(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "slice_%03zu.pgm", k);
        write_pgm(dir / name, vol.slice(k));
        names.push_back(name);
    }
    nlohmann::ordered_json manifest;
    manifest["width"] = vol.width();
    manifest["height"] = vol.height();
    manifest["slice_count"] = vol.slice_count();
    manifest["slices"] = names;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

Volume read_volume(const fs::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open volume manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(manifest_path.string() + ": " + e.what());
    }

    const auto names = manifest.value("slices", std::vector<std::string>{});
    const auto count = manifest.value("slice_count", names.size());
    if (names.empty() || names.size() != count) throw IoError(manifest_path.string() + ": slice list/count mismatch");

    std::vector<ImageGrid> slices;
    slices.reserve(names.size());
    for (const auto& name : names) slices.push_back(read_pgm(dir / name));

    const auto w = manifest.value("width", slices.front().width());
    const auto h = manifest.value("height", slices.front().height());
    for (const auto& s : slices) {
        if (s.width() != w || s.height() != h) throw IoError(manifest_path.string() + ": slice size disagrees with manifest");
    }
    return Volume(std::move(slices));
}

}  // namespace dbt
