#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ogs {

// Dense row-major tensor. Values are held as double in memory; the on-disk
// payload is float32 (see tensor_io), and every float32 is exactly
// representable as double, so load->save round-trips are bit-exact.
struct Tensor {
    std::vector<uint32_t> dims;
    std::vector<double> data;

    size_t size() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

// H x W x C raster, row-major with channels innermost.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c),
          data(static_cast<size_t>(h) * w * c, fill) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

// H x W scalar field (inverse depth, masks, uncertainty, ...).
struct Plane {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Plane() = default;
    Plane(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

    double& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const {
        return data[static_cast<size_t>(y) * width + x];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const Plane& o) const {
        return height == o.height && width == o.width;
    }
};

Tensor to_tensor(const Image& img);
Tensor to_tensor(const Plane& p);
Image image_from_tensor(const Tensor& t);
Plane plane_from_tensor(const Tensor& t);

// Binary tensor file: magic "OGT1", u32 rank, u32 dims[rank], f32 payload,
// row-major little-endian. Writes go through a temp file + rename.
Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& t);

} // namespace ogs
