#include "fusim/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fusim/error.hpp"

namespace fusim::nn {

namespace {

constexpr const char* kMagic = "FUSIM1";

void put_le(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
}

double get_le(const char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    return std::bit_cast<double>(bits);
}

}  // namespace

std::string encode_checkpoint(const ParameterSet& params) {
    std::string header = std::string(kMagic) + "\n" + std::to_string(params.size()) + "\n";
    std::size_t offset = 0;
    for (const auto& e : params.entries()) {
        header += e.name + " " + std::to_string(e.value.rank());
        for (std::size_t d : e.value.shape()) header += " " + std::to_string(d);
        header += " " + std::to_string(offset) + " " + std::to_string(e.value.size()) + "\n";
        offset += e.value.size() * 8;
    }
    header += "END\n";
    std::string out = std::move(header);
    out.reserve(out.size() + offset);
    for (const auto& e : params.entries()) {
        for (double v : e.value.values()) put_le(out, v);
    }
    return out;
}

ParameterSet decode_checkpoint(const std::string& bytes) {
    const std::size_t end_marker = bytes.find("\nEND\n");
    if (bytes.rfind(kMagic, 0) != 0 || end_marker == std::string::npos) {
        throw IoError("checkpoint: missing FUSIM1 header");
    }
    const std::size_t payload = end_marker + 5;
    std::istringstream manifest(bytes.substr(0, end_marker));
    std::string magic;
    std::size_t count = 0;
    if (!(manifest >> magic >> count)) throw IoError("checkpoint: bad manifest header");

    ParameterSet params;
    for (std::size_t i = 0; i < count; ++i) {
        std::string name;
        std::size_t rank = 0;
        if (!(manifest >> name >> rank)) throw IoError("checkpoint: truncated manifest");
        Shape shape(rank);
        for (auto& d : shape) {
            if (!(manifest >> d)) throw IoError("checkpoint: truncated shape for " + name);
        }
        std::size_t offset = 0;
        std::size_t elements = 0;
        if (!(manifest >> offset >> elements)) throw IoError("checkpoint: truncated entry " + name);
        if (elements != shape_size(shape)) throw IoError("checkpoint: element count mismatch for " + name);
        if (payload + offset + elements * 8 > bytes.size()) throw IoError("checkpoint: payload truncated at " + name);
        std::vector<double> data(elements);
        for (std::size_t j = 0; j < elements; ++j) data[j] = get_le(bytes.data() + payload + offset + 8 * j);
        params.add(name, Tensor(std::move(shape), std::move(data)));
    }
    return params;
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const std::string bytes = encode_checkpoint(params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace fusim::nn
