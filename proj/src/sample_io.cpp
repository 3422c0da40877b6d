#include "augda/sample_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

namespace augda::io {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "npy writer assumes a little-endian host");

namespace {

void write_npy_raw(const fs::path& path, const char* descr, std::size_t rows, std::size_t cols,
                   const void* data, std::size_t bytes) {
    std::string header = "{'descr': '" + std::string(descr) + "', 'fortran_order': False, 'shape': (" +
                         std::to_string(rows) + ", " + std::to_string(cols) + "), }";
    // Magic(6) + version(2) + len(2) + header + '\n' padded to 64 bytes.
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_npy: cannot open " + path.string());
    out.write("\x93NUMPY\x01\x00", 8);
    const auto len = static_cast<std::uint16_t>(header.size());
    out.put(static_cast<char>(len & 0xFF));
    out.put(static_cast<char>(len >> 8));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw std::runtime_error("write_npy: write failed for " + path.string());
}

struct NpyHeader {
    std::string descr;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

NpyHeader read_npy_header(std::ifstream& in, const fs::path& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0)
        throw std::runtime_error("read_npy: not an npy file: " + path.string());
    std::size_t len = 0;
    if (magic[6] == 1) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        len = b[0] | (b[1] << 8);
    } else {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::size_t>(b[3]) << 24);
    }
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("read_npy: truncated header: " + path.string());

    static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
    static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
    static const std::regex shape_re(R"('shape'\s*:\s*\(\s*(\d+)\s*,\s*(\d+)\s*,?\s*\))");
    std::smatch m;
    NpyHeader h;
    if (!std::regex_search(header, m, descr_re)) throw std::runtime_error("read_npy: missing descr");
    h.descr = m[1];
    if (std::regex_search(header, m, fortran_re) && m[1] == "True")
        throw std::runtime_error("read_npy: Fortran order unsupported");
    if (!std::regex_search(header, m, shape_re)) throw std::runtime_error("read_npy: expected 2-D shape");
    h.rows = std::stoul(m[1]);
    h.cols = std::stoul(m[2]);
    return h;
}

template <class T>
Grid<T> read_npy_as(const fs::path& path, std::initializer_list<const char*> descrs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_npy: cannot open " + path.string());
    const auto h = read_npy_header(in, path);
    bool ok = false;
    for (auto d : descrs) ok = ok || h.descr == d;
    if (!ok) throw std::runtime_error("read_npy: unexpected dtype '" + h.descr + "' in " + path.string());
    std::vector<T> data(h.rows * h.cols);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
    if (!in) throw std::runtime_error("read_npy: truncated data: " + path.string());
    return Grid<T>(h.rows, h.cols, std::move(data));
}

}  // namespace

void write_npy(const fs::path& path, const Grid<double>& grid) {
    write_npy_raw(path, "<f8", grid.rows(), grid.cols(), grid.vec().data(), grid.size() * sizeof(double));
}

void write_npy(const fs::path& path, const Grid<std::uint8_t>& grid) {
    write_npy_raw(path, "|u1", grid.rows(), grid.cols(), grid.vec().data(), grid.size());
}

Grid<double> read_npy_f8(const fs::path& path) { return read_npy_as<double>(path, {"<f8"}); }
Grid<std::uint8_t> read_npy_u1(const fs::path& path) {
    return read_npy_as<std::uint8_t>(path, {"|u1", "<u1", "|b1"});
}

void write_key_values(const fs::path& path, const KeyValues& kv) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_key_values: cannot open " + path.string());
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

KeyValues read_key_values(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_key_values: cannot open " + path.string());
    KeyValues kv;
    std::string line;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("read_key_values: malformed line '" + line + "'");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

KeyValues image_meta(const std::string& id, const Image2D& img) {
    return {{"id", id},
            {"row_mm", fmt_double(img.spacing().row_mm)},
            {"col_mm", fmt_double(img.spacing().col_mm)},
            {"domain_id", std::to_string(img.domain_id())}};
}

const std::string& need(const KeyValues& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("sample metadata missing key '" + key + "'");
    return it->second;
}

Image2D read_image(const fs::path& dir, const KeyValues& kv) {
    return Image2D(read_npy_f8(dir / "image.npy"),
                   Spacing{std::stod(need(kv, "row_mm")), std::stod(need(kv, "col_mm"))},
                   std::stoi(need(kv, "domain_id")));
}

}  // namespace

void write_sample(const fs::path& root, const LabeledSample& s) {
    const auto dir = root / s.id;
    fs::create_directories(dir);
    write_npy(dir / "image.npy", s.image.pixels());
    write_npy(dir / "mask.npy", s.mask.labels());
    write_key_values(dir / "meta.txt", image_meta(s.id, s.image));
}

void write_sample(const fs::path& root, const UnlabeledSample& s) {
    const auto dir = root / s.id;
    fs::create_directories(dir);
    write_npy(dir / "image.npy", s.image.pixels());
    auto kv = image_meta(s.id, s.image);
    if (s.partner) {
        write_npy(dir / "partner.npy", s.partner->pixels());
        kv["partner_domain_id"] = std::to_string(s.partner->domain_id());
    }
    write_key_values(dir / "meta.txt", kv);
}

LabeledSample read_labeled(const fs::path& dir) {
    const auto kv = read_key_values(dir / "meta.txt");
    return LabeledSample(need(kv, "id"), read_image(dir, kv), BinMask(read_npy_u1(dir / "mask.npy")));
}

UnlabeledSample read_unlabeled(const fs::path& dir) {
    const auto kv = read_key_values(dir / "meta.txt");
    auto img = read_image(dir, kv);
    std::optional<Image2D> partner;
    if (fs::exists(dir / "partner.npy"))
        partner = Image2D(read_npy_f8(dir / "partner.npy"), img.spacing(), std::stoi(need(kv, "partner_domain_id")));
    return UnlabeledSample(need(kv, "id"), std::move(img), std::move(partner));
}

}  // namespace augda::io
