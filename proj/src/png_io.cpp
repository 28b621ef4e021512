#include "ogs/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace ogs {

Image read_png(const std::filesystem::path& path) {
    png_image pimg;
    std::memset(&pimg, 0, sizeof(pimg));
    pimg.version = PNG_IMAGE_VERSION;

    if (!png_image_begin_read_from_file(&pimg, path.string().c_str()))
        throw std::runtime_error("png read '" + path.string() +
                                 "': " + pimg.message);

    pimg.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(pimg));
    if (!png_image_finish_read(&pimg, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = pimg.message;
        png_image_free(&pimg);
        throw std::runtime_error("png read '" + path.string() + "': " + msg);
    }

    Image img(static_cast<int>(pimg.height), static_cast<int>(pimg.width), 3);
    for (size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = buf[i] / 255.0;
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 3)
        throw std::runtime_error("write_png expects a 3-channel image");
    if (!path.parent_path().empty())
        std::filesystem::create_directories(path.parent_path());

    std::vector<uint8_t> buf(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        double v = std::clamp(img.data[i], 0.0, 1.0);
        buf[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }

    png_image pimg;
    std::memset(&pimg, 0, sizeof(pimg));
    pimg.version = PNG_IMAGE_VERSION;
    pimg.width = static_cast<png_uint_32>(img.width);
    pimg.height = static_cast<png_uint_32>(img.height);
    pimg.format = PNG_FORMAT_RGB;

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    if (!png_image_write_to_file(&pimg, tmp.string().c_str(), 0, buf.data(), 0,
                                 nullptr))
        throw std::runtime_error("png write '" + tmp.string() +
                                 "': " + pimg.message);
    std::filesystem::rename(tmp, path);
}

} // namespace ogs
