#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cfp/params.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

// All binary formats are little-endian with 64-bit IEEE doubles; readers
// throw std::runtime_error naming the file and what was expected.

void write_u32(std::ostream& os, std::uint32_t v);
void write_i32(std::ostream& os, std::int32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);
void write_f64_array(std::ostream& os, const double* p, std::size_t n);

std::uint32_t read_u32(std::istream& is, const std::string& what);
std::int32_t read_i32(std::istream& is, const std::string& what);
std::uint64_t read_u64(std::istream& is, const std::string& what);
double read_f64(std::istream& is, const std::string& what);
std::string read_string(std::istream& is, const std::string& what);
void read_f64_array(std::istream& is, double* p, std::size_t n, const std::string& what);

// 8-bit binary portable graymap from values in [0,1] (clamped, rounded).
void write_pgm(const std::filesystem::path& path, const Tensor& image, int side);

// Deterministic float rendering for CSV cells (round-trippable %.12g).
std::string format_double(double v);

// CSV with two leading comment lines (schema version, config hash) so every
// metrics file carries its lineage; identical runs produce identical bytes.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns,
              std::uint64_t config_hash, int schema_version = 1);
    void row(const std::vector<std::string>& cells);
    void close();

private:
    std::ofstream os_;
    std::filesystem::path path_;
    std::size_t width_;
};

// Model checkpoint: named tensors plus the config hash and a kind tag
// ("denoiser", "classifier", ...) so mixed-up files fail loudly.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, std::uint64_t config_hash,
                     const std::string& kind);
ParamSet load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind,
                         std::uint64_t* config_hash_out = nullptr);

// Missing-artifact guard: error message tells the user which subcommand
// produces the file.
void require_artifact(const std::filesystem::path& path, const std::string& producing_subcommand);

}  // namespace cfp
