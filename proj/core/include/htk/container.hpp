#pragma once

// Flat binary tensor container.
// Layout: "HTK1" magic, u8 dtype (0 = f32, 1 = f64), u8 rank, rank little
// endian u32 extents, then the row-major values. No padding anywhere.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "htk/common.hpp"
#include "htk/tensor.hpp"

namespace htk {

static_assert(std::endian::native == std::endian::little, "container io assumes a little endian host");

template <typename T>
struct dtype_code;
template <>
struct dtype_code<float> {
    static constexpr std::uint8_t value = 0;
};
template <>
struct dtype_code<double> {
    static constexpr std::uint8_t value = 1;
};

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write("HTK1", 4);
    const std::uint8_t dt = dtype_code<T>::value;
    const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
    out.put(static_cast<char>(dt));
    out.put(static_cast<char>(rank));
    for (int i = 0; i < t.rank(); ++i) {
        const std::uint32_t e = static_cast<std::uint32_t>(t.dim(i));
        out.write(reinterpret_cast<const char*>(&e), 4);
    }
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!out) throw IoError("short write: " + path.string());
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "HTK1", 4) != 0)
        throw IoError("not a tensor container: " + path.string());
    const int dt = in.get();
    const int rank = in.get();
    if (dt == EOF || rank == EOF) throw IoError("truncated header: " + path.string());
    if (dt != dtype_code<T>::value)
        throw IoError("dtype code " + std::to_string(dt) + " does not match requested element type: " +
                      path.string());
    if (rank < 1) throw IoError("invalid rank " + std::to_string(rank) + ": " + path.string());
    Shape shape(static_cast<std::size_t>(rank));
    std::int64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
        std::uint32_t e = 0;
        if (!in.read(reinterpret_cast<char*>(&e), 4)) throw IoError("truncated extents: " + path.string());
        if (e == 0) throw IoError("zero extent: " + path.string());
        shape[static_cast<std::size_t>(i)] = static_cast<int>(e);
        numel *= e;
    }
    std::vector<T> data(static_cast<std::size_t>(numel));
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(numel * sizeof(T))))
        throw IoError("truncated payload: " + path.string());
    char extra;
    if (in.read(&extra, 1)) throw IoError("trailing bytes after payload: " + path.string());
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace htk
