#include "hrg/serial.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "hrg/errors.hpp"

namespace hrg::io {
namespace {

void put_bytes(std::ostream& os, const unsigned char* b, size_t n) {
    os.write(reinterpret_cast<const char*>(b), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& is, unsigned char* b, size_t n) {
    is.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) {
        throw IoError("unexpected end of stream");
    }
}

}  // namespace

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 4);
}

void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 8);
}

void write_f32(std::ostream& os, float v) {
    write_u32(os, std::bit_cast<uint32_t>(v));
}

void write_f64(std::ostream& os, double v) {
    write_u64(os, std::bit_cast<uint64_t>(v));
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_f64_array(std::ostream& os, const std::vector<double>& v) {
    for (double x : v) write_f64(os, x);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    get_bytes(is, b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    get_bytes(is, b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }

double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

std::string read_string(std::istream& is) {
    const uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) {
        throw IoError("unexpected end of stream in string");
    }
    return s;
}

std::vector<double> read_f64_array(std::istream& is, size_t count) {
    std::vector<double> v(count);
    for (size_t i = 0; i < count; ++i) v[i] = read_f64(is);
    return v;
}

void write_magic(std::ostream& os, const char magic[4]) {
    os.write(magic, 4);
}

bool read_magic(std::istream& is, const char magic[4]) {
    char b[4];
    is.read(b, 4);
    return is.gcount() == 4 && std::memcmp(b, magic, 4) == 0;
}

}  // namespace hrg::io
