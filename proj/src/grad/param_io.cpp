#include "icopro/grad/param_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "icopro/errors.hpp"

namespace icopro::grad {
namespace {

static_assert(std::endian::native == std::endian::little, "parameter files are written little-endian");

constexpr std::array<char, 4> kMagic{'I', 'C', 'P', 'R'};

void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated parameter file");
    return v;
}

void put_doubles(std::ostream& out, std::span<const double> xs) {
    out.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size_bytes()));
}

void get_doubles(std::istream& in, std::span<double> xs) {
    if (!in.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(xs.size_bytes()))) {
        throw FormatError("truncated parameter file");
    }
}

} // namespace

void write_params(std::ostream& out, const MlpParams& params) {
    params.validate();
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, kParamFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(params.layers.size()));
    for (const auto& layer : params.layers) {
        put_u32(out, static_cast<std::uint32_t>(layer.out_dim()));
        put_u32(out, static_cast<std::uint32_t>(layer.in_dim()));
        put_doubles(out, layer.weight.data());
        put_doubles(out, layer.bias.data());
    }
    if (!out) throw FormatError("failed writing parameter file");
}

MlpParams read_params(std::istream& in, Activation activation, bool activate_output) {
    std::array<char, 4> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("bad parameter file magic");
    const auto version = get_u32(in);
    if (version != kParamFormatVersion) {
        throw FormatError("unsupported parameter file version " + std::to_string(version));
    }
    const auto count = get_u32(in);
    MlpParams p;
    p.activation = activation;
    p.activate_output = activate_output;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto rows = get_u32(in);
        const auto cols = get_u32(in);
        DenseLayer layer{DenseTensor({rows, cols}), DenseTensor({rows})};
        get_doubles(in, layer.weight.data());
        get_doubles(in, layer.bias.data());
        p.layers.push_back(std::move(layer));
    }
    p.validate();
    return p;
}

} // namespace icopro::grad
