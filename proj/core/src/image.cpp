#include "handsplat/image.hpp"

#include "handsplat/types.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace handsplat {

Image<std::uint8_t> quantize(const Image<float>& image) {
    Image<std::uint8_t> out(image.width, image.height, image.channels);
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        const float v = std::clamp(image.data[i], 0.0f, 1.0f);
        out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return out;
}

Image<float> dequantize(const Image<std::uint8_t>& image) {
    Image<float> out(image.width, image.height, image.channels);
    for (std::size_t i = 0; i < image.data.size(); ++i) out.data[i] = image.data[i] / 255.0f;
    return out;
}

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_png(const std::string& path, const Image<std::uint8_t>& image) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.c_str(), 0, image.data.data(), 0, nullptr)) {
        throw std::runtime_error("cannot write PNG '" + path + "': " + png.message);
    }
}

Image<std::uint8_t> read_png(const std::string& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw std::runtime_error("cannot read PNG '" + path + "': " + png.message);
    }
    const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
    png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Image<std::uint8_t> out(static_cast<int>(png.width), static_cast<int>(png.height), gray ? 1 : 3);
    if (!png_image_finish_read(&png, nullptr, out.data.data(), 0, nullptr)) {
        throw std::runtime_error("cannot decode PNG '" + path + "': " + png.message);
    }
    return out;
}

void write_pnm(const std::string& path, const Image<std::uint8_t>& image) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open '" + path + "' for writing");
    file << (image.channels == 1 ? "P5" : "P6") << "\n" << image.width << " " << image.height << "\n255\n";
    file.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
    if (!file) throw std::runtime_error("failed writing '" + path + "'");
}

Image<std::uint8_t> read_pnm(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open '" + path + "'");
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    file >> magic >> w >> h >> maxval;
    file.get();
    if ((magic != "P5" && magic != "P6") || maxval != 255 || w <= 0 || h <= 0) {
        throw std::runtime_error("unsupported PNM file '" + path + "'");
    }
    Image<std::uint8_t> out(w, h, magic == "P5" ? 1 : 3);
    file.read(reinterpret_cast<char*>(out.data.data()), static_cast<std::streamsize>(out.data.size()));
    if (!file) throw std::runtime_error("truncated PNM file '" + path + "'");
    return out;
}

}  // namespace

void write_image(const std::string& path, const Image<float>& image) {
    if (image.channels != 1 && image.channels != 3) throw ContractViolation("write_image: 1 or 3 channels only");
    const auto bytes = quantize(image);
    if (has_suffix(path, ".ppm") || has_suffix(path, ".pgm")) {
        write_pnm(path, bytes);
    } else {
        write_png(path, bytes);
    }
}

Image<float> read_image(const std::string& path) {
    if (has_suffix(path, ".ppm") || has_suffix(path, ".pgm")) return dequantize(read_pnm(path));
    return dequantize(read_png(path));
}

double psnr(const Image<float>& a, const Image<float>& b) {
    if (!a.same_shape(b)) throw ContractViolation("psnr: image shapes differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace handsplat
