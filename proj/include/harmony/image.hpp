#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace harmony {

// Height×width×channels pixels in [0,1], row-major with channels innermost.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<double> pixels;

    static Image black(std::size_t height, std::size_t width, std::size_t channels = 1) {
        return {height, width, channels, std::vector<double>(height * width * channels, 0.0)};
    }
    std::size_t size() const { return pixels.size(); }
    double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
        return pixels[(y * width + x) * channels + c];
    }
    double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }
    bool operator==(const Image&) const = default;
};

// Binary PGM (P5), maxval 255. Single-channel images only.
void write_pgm(const std::filesystem::path& path, const Image& img);
Image read_pgm(const std::filesystem::path& path);

double pixel_mse(const Image& a, const Image& b);

}  // namespace harmony
