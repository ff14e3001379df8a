#include "support/pgm.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace jointdiff::tools {

int quantize_unit(float v) {
    if (!std::isfinite(v)) throw std::invalid_argument("pgm: non-finite pixel");
    const double scaled = (static_cast<double>(v) + 1.0) / 2.0 * 255.0;
    const int q = static_cast<int>(std::floor(scaled + 0.5));  // round half up
    return q < 0 ? 0 : (q > 255 ? 255 : q);
}

void write_pgm(const std::vector<float>& grid, int width, int height, const std::string& path) {
    if (grid.size() != static_cast<size_t>(width) * height)
        throw std::invalid_argument("pgm: grid size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("pgm: cannot open " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    for (float v : grid) {
        const unsigned char byte = static_cast<unsigned char>(quantize_unit(v));
        os.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!os) throw std::runtime_error("pgm: write failed for " + path);
}

std::vector<float> read_pgm(const std::string& path, int& width, int& height) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("pgm: cannot open " + path);
    std::string magic;
    int maxval = 0;
    is >> magic >> width >> height >> maxval;
    if (magic != "P5" || maxval != 255 || width <= 0 || height <= 0)
        throw std::runtime_error("pgm: unsupported header in " + path);
    is.get();  // single whitespace after maxval
    std::vector<float> out(static_cast<size_t>(width) * height);
    for (auto& v : out) {
        unsigned char byte = 0;
        is.read(reinterpret_cast<char*>(&byte), 1);
        if (!is) throw std::runtime_error("pgm: truncated file " + path);
        v = static_cast<float>(byte / 255.0 * 2.0 - 1.0);
    }
    return out;
}

}  // namespace jointdiff::tools
