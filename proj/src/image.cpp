#include "harmony/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "harmony/errors.hpp"

namespace harmony {

void write_pgm(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1) throw ContractError("write_pgm: only single-channel images");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    for (double v : img.pixels) {
        const double c = std::clamp(v, 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
}

Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    in.get();
    if (magic != "P5" || maxval == 0 || maxval > 255) throw IntegrityError("not a P5 PGM: " + path.string());
    Image img = Image::black(h, w);
    for (auto& v : img.pixels) {
        const int c = in.get();
        if (c == EOF) throw IntegrityError("truncated PGM: " + path.string());
        v = static_cast<double>(c) / static_cast<double>(maxval);
    }
    return img;
}

double pixel_mse(const Image& a, const Image& b) {
    if (a.size() != b.size() || a.size() == 0) {
        throw DimensionError("pixel_mse: image sizes " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
    return acc / static_cast<double>(a.size());
}

}  // namespace harmony
