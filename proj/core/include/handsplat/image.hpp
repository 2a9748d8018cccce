#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace handsplat {

// Interleaved row-major image, channels per pixel.
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, int c, T fill = T(0)) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

    T& at(int x, int y, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
    T at(int x, int y, int c = 0) const { return data[(std::size_t(y) * width + x) * channels + c]; }
    std::size_t pixel_count() const { return std::size_t(width) * height; }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }

    template <typename U>
    Image<U> cast() const {
        Image<U> out(width, height, channels);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

// 8-bit quantization with round-to-nearest, values clamped to [0, 1].
Image<std::uint8_t> quantize(const Image<float>& image);
Image<float> dequantize(const Image<std::uint8_t>& image);

// PNG (1 or 3 channels) through libpng; PPM/PGM picked by extension.
void write_image(const std::string& path, const Image<float>& image);
Image<float> read_image(const std::string& path);

// Peak signal-to-noise ratio for [0, 1] images over all channels; +inf for
// identical inputs.
double psnr(const Image<float>& a, const Image<float>& b);

}  // namespace handsplat
