#include "cfp/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace cfp {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; add byte swapping before building on a big-endian host");

namespace {

template <typename T>
void write_raw(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, const std::string& what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("truncated file while reading " + what);
    return v;
}

constexpr std::uint32_t kCheckpointMagic = 0x4b434643u;  // "CFCK"
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_raw(os, v); }
void write_i32(std::ostream& os, std::int32_t v) { write_raw(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_raw(os, v); }
void write_f64(std::ostream& os, double v) { write_raw(os, v); }

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_f64_array(std::ostream& os, const double* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

std::uint32_t read_u32(std::istream& is, const std::string& what) { return read_raw<std::uint32_t>(is, what); }
std::int32_t read_i32(std::istream& is, const std::string& what) { return read_raw<std::int32_t>(is, what); }
std::uint64_t read_u64(std::istream& is, const std::string& what) { return read_raw<std::uint64_t>(is, what); }
double read_f64(std::istream& is, const std::string& what) { return read_raw<double>(is, what); }

std::string read_string(std::istream& is, const std::string& what) {
    const std::uint32_t n = read_u32(is, what + " length");
    if (n > (1u << 20)) throw std::runtime_error("implausible string length in " + what);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("truncated file while reading " + what);
    return s;
}

void read_f64_array(std::istream& is, double* p, std::size_t n, const std::string& what) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("truncated file while reading " + what);
}

void write_pgm(const std::filesystem::path& path, const Tensor& image, int side) {
    if (image.numel() != side * side) {
        throw std::invalid_argument("write_pgm: image has " + std::to_string(image.numel()) + " values, expected " +
                                    std::to_string(side * side));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << "P5\n" << side << " " << side << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(image.numel()));
    for (int i = 0; i < image.numel(); ++i) {
        const double v = std::clamp(image[i], 0.0, 1.0);
        bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns,
                     std::uint64_t config_hash, int schema_version)
    : os_(path), path_(path), width_(columns.size()) {
    if (!os_) throw std::runtime_error("cannot open " + path.string() + " for writing");
    if (columns.empty()) throw std::invalid_argument("CsvWriter: no columns");
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(config_hash));
    os_ << "# schema_version=" << schema_version << "\n";
    os_ << "# config_hash=" << hash << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) os_ << ",";
        os_ << columns[i];
    }
    os_ << "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) {
        throw std::invalid_argument("CsvWriter: row has " + std::to_string(cells.size()) + " cells, header has " +
                                    std::to_string(width_));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) os_ << ",";
        os_ << cells[i];
    }
    os_ << "\n";
}

void CsvWriter::close() {
    if (os_.is_open()) {
        os_.flush();
        if (!os_) throw std::runtime_error("failed writing " + path_.string());
        os_.close();
    }
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, std::uint64_t config_hash,
                     const std::string& kind) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_u32(os, kCheckpointMagic);
    write_u32(os, kCheckpointVersion);
    write_string(os, kind);
    write_u64(os, config_hash);
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params.tensors()) {
        write_string(os, name);
        write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape) write_i32(os, d);
        write_f64_array(os, t.ptr(), t.data.size());
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

ParamSet load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind,
                         std::uint64_t* config_hash_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
    const std::string ctx = path.string();
    if (read_u32(is, ctx + " magic") != kCheckpointMagic) {
        throw std::runtime_error(ctx + " is not a model checkpoint (bad magic)");
    }
    const std::uint32_t version = read_u32(is, ctx + " version");
    if (version != kCheckpointVersion) {
        throw std::runtime_error(ctx + ": unsupported checkpoint version " + std::to_string(version));
    }
    const std::string kind = read_string(is, ctx + " kind");
    if (kind != expected_kind) {
        throw std::runtime_error(ctx + " holds a '" + kind + "' model, expected '" + expected_kind + "'");
    }
    const std::uint64_t hash = read_u64(is, ctx + " config hash");
    if (config_hash_out) *config_hash_out = hash;
    const std::uint32_t count = read_u32(is, ctx + " tensor count");
    ParamSet params;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = read_string(is, ctx + " tensor name");
        const std::uint32_t rank = read_u32(is, ctx + " tensor rank");
        if (rank > 8) throw std::runtime_error(ctx + ": implausible tensor rank");
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = read_i32(is, ctx + " tensor dim");
            if (d <= 0) throw std::runtime_error(ctx + ": non-positive tensor dimension");
            numel *= static_cast<std::size_t>(d);
        }
        std::vector<double> data(numel);
        read_f64_array(is, data.data(), numel, ctx + " tensor data");
        params.add(name, Tensor(std::move(shape), std::move(data)));
    }
    return params;
}

void require_artifact(const std::filesystem::path& path, const std::string& producing_subcommand) {
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error("missing artifact " + path.string() + "; run `" + producing_subcommand +
                                 "` first");
    }
}

}  // namespace cfp
