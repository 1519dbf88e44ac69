#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace hrg::io {

// Little-endian primitives for the binary file formats. Explicit byte
// assembly, so the formats are identical on any host.
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);  // u32 length + bytes
void write_f64_array(std::ostream& os, const std::vector<double>& v);

uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);
std::vector<double> read_f64_array(std::istream& is, size_t count);

void write_magic(std::ostream& os, const char magic[4]);
bool read_magic(std::istream& is, const char magic[4]);

}  // namespace hrg::io
