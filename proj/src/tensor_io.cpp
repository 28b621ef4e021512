#include "ogs/tensor.hpp"

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace ogs {

namespace {

constexpr char kMagic[4] = {'O', 'G', 'T', '1'};

static_assert(sizeof(float) == 4 && sizeof(uint32_t) == 4);

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
    throw std::runtime_error("tensor file '" + path.string() + "': " + what);
}

} // namespace

Tensor to_tensor(const Image& img) {
    Tensor t;
    t.dims = {static_cast<uint32_t>(img.height), static_cast<uint32_t>(img.width),
              static_cast<uint32_t>(img.channels)};
    t.data = img.data;
    return t;
}

Tensor to_tensor(const Plane& p) {
    Tensor t;
    t.dims = {static_cast<uint32_t>(p.height), static_cast<uint32_t>(p.width)};
    t.data = p.data;
    return t;
}

Image image_from_tensor(const Tensor& t) {
    if (t.dims.size() != 3)
        throw std::runtime_error("image tensor must have rank 3, got rank " +
                                 std::to_string(t.dims.size()));
    Image img(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
              static_cast<int>(t.dims[2]));
    img.data = t.data;
    return img;
}

Plane plane_from_tensor(const Tensor& t) {
    if (t.dims.size() != 2)
        throw std::runtime_error("plane tensor must have rank 2, got rank " +
                                 std::to_string(t.dims.size()));
    Plane p(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
    p.data = t.data;
    return p;
}

Tensor read_tensor(const std::filesystem::path& path) {
    FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) fail(path, "cannot open for reading");

    char magic[4];
    if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, kMagic, 4) != 0)
        fail(path, "bad magic (expected OGT1)");

    uint32_t rank = 0;
    if (std::fread(&rank, 4, 1, f.get()) != 1) fail(path, "truncated rank");
    if (rank > 8) fail(path, "rank " + std::to_string(rank) + " too large");

    Tensor t;
    t.dims.resize(rank);
    if (rank && std::fread(t.dims.data(), 4, rank, f.get()) != rank)
        fail(path, "truncated dims");

    size_t n = t.size();
    if (n > (1ull << 30)) fail(path, "payload too large");
    std::vector<float> payload(n);
    if (n && std::fread(payload.data(), 4, n, f.get()) != n)
        fail(path, "truncated payload");

    t.data.assign(payload.begin(), payload.end());
    return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    if (!path.parent_path().empty())
        std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        FilePtr f(std::fopen(tmp.string().c_str(), "wb"));
        if (!f) fail(tmp, "cannot open for writing");
        uint32_t rank = static_cast<uint32_t>(t.dims.size());
        std::vector<float> payload(t.data.begin(), t.data.end());
        if (std::fwrite(kMagic, 1, 4, f.get()) != 4 ||
            std::fwrite(&rank, 4, 1, f.get()) != 1 ||
            (rank && std::fwrite(t.dims.data(), 4, rank, f.get()) != rank) ||
            (!payload.empty() &&
             std::fwrite(payload.data(), 4, payload.size(), f.get()) != payload.size()))
            fail(tmp, "write failed");
        if (std::fflush(f.get()) != 0) fail(tmp, "flush failed");
    }
    std::filesystem::rename(tmp, path);
}

} // namespace ogs
