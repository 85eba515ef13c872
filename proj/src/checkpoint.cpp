#include "deft/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace deft {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'F', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint16_t kVersion = 1;

// This code assumes a little-endian host, which matches the on-disk format.

template <typename V>
void write_pod(std::ofstream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const char* what) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
    return v;
}

void write_floats(std::ofstream& out, const std::vector<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
}

void read_floats(std::ifstream& in, std::vector<float>& v, const char* what) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!in) throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Parameter<float>*>& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint16_t>(out, kVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const Parameter<float>* p : params) {
        write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(p->value.shape.size()));
        for (int d : p->value.shape) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        write_floats(out, p->value.data);
        write_floats(out, p->adam_m.data);
        write_floats(out, p->adam_v.data);
        write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(p->step_count));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

void load_checkpoint(const std::string& path, const std::vector<Parameter<float>*>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    const auto version = read_pod<std::uint16_t>(in, "version");
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const auto count = read_pod<std::uint32_t>(in, "entry count");

    std::map<std::string, Parameter<float>*> by_name;
    for (Parameter<float>* p : params) by_name[p->name] = p;
    if (count != params.size())
        throw std::runtime_error("checkpoint entry count " + std::to_string(count) +
                                 " does not match model parameter count " + std::to_string(params.size()));

    for (std::uint32_t e = 0; e < count; ++e) {
        const auto name_len = read_pod<std::uint16_t>(in, "name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw std::runtime_error("checkpoint truncated while reading name");
        const auto ndim = read_pod<std::uint8_t>(in, "rank");
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int>(read_pod<std::uint32_t>(in, "extent"));

        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint has unknown parameter " + name);
        Parameter<float>* p = it->second;
        if (p->value.shape != shape)
            throw std::runtime_error("checkpoint shape mismatch for " + name + ": file " +
                                     shape_str(shape) + " vs model " + shape_str(p->value.shape));
        read_floats(in, p->value.data, "values");
        read_floats(in, p->adam_m.data, "adam m");
        read_floats(in, p->adam_v.data, "adam v");
        p->step_count = static_cast<std::int64_t>(read_pod<std::uint64_t>(in, "step count"));
        p->zero_grad();
    }
}

}  // namespace deft
