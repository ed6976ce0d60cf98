#include "fedsim/model_io.hpp"

#include "fedsim/error.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace fedsim {

namespace {

constexpr char kMagic[8] = {'F', 'E', 'D', 'S', 'I', 'M', '1', '\n'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) {
        bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw IoError("load_paramset: truncated file '" + path + "'");
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
    }
    return v;
}

void write_f64_le(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_f64_le(std::ifstream& in, const std::string& path) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
        throw IoError("load_paramset: truncated file '" + path + "'");
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    }
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

} // namespace

void save_paramset(const ParamSet& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("save_paramset: cannot open '" + path + "'");
    }
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        write_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u32(out, static_cast<std::uint32_t>(p.value.rows()));
        write_u32(out, static_cast<std::uint32_t>(p.value.cols()));
        for (double v : p.value.data()) {
            write_f64_le(out, v);
        }
    }
    if (!out) {
        throw IoError("save_paramset: write to '" + path + "' failed");
    }
}

ParamSet load_paramset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("load_paramset: cannot open '" + path + "'");
    }
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("load_paramset: '" + path + "' is not a model file");
    }
    const std::uint32_t version = read_u32(in, path);
    if (version != kVersion) {
        throw IoError("load_paramset: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = read_u32(in, path);
    ParamSet out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) {
            throw IoError("load_paramset: truncated file '" + path + "'");
        }
        const std::uint32_t rows = read_u32(in, path);
        const std::uint32_t cols = read_u32(in, path);
        Matrix m(rows, cols);
        for (double& v : m.data()) {
            v = read_f64_le(in, path);
        }
        out.add(std::move(name), std::move(m));
    }
    return out;
}

} // namespace fedsim
