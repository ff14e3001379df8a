#ifndef JOINTDIFF_TOOLS_PGM_HPP
#define JOINTDIFF_TOOLS_PGM_HPP

#include <string>
#include <vector>

namespace jointdiff::tools {

// Affine map [-1,1] -> [0,255] with round-half-up, written as binary PGM
// (P5, maxval 255).
void write_pgm(const std::vector<float>& grid, int width, int height, const std::string& path);

// Inverse map back into [-1,1]; values land within 1/255 of the originals.
std::vector<float> read_pgm(const std::string& path, int& width, int& height);

// The quantizer used by write_pgm, exposed for tests.
int quantize_unit(float v);

}  // namespace jointdiff::tools

#endif
