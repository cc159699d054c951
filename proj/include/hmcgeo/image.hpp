#pragma once

#include <Eigen/Dense>
#include <string>

namespace hmcgeo {

// 2D scalar image on the integer pixel grid, row-major with index y*width + x.
// Intensities live in [0, 1]; pixel (x, y) is a sample point, so the
// continuous domain covered by bilinear interpolation is
// [0, width-1] x [0, height-1].
struct ImageGrid {
  Eigen::Index width = 0;
  Eigen::Index height = 0;
  Eigen::VectorXd intensities;

  double at(Eigen::Index x, Eigen::Index y) const {
    return intensities[y * width + x];
  }
  double& at(Eigen::Index x, Eigen::Index y) {
    return intensities[y * width + x];
  }

  static ImageGrid zeros(Eigen::Index width, Eigen::Index height);

  // Throws ArgumentError unless dimensions are positive, the intensity
  // array has length width*height, and every value is finite in [0, 1].
  void validate() const;
};

struct BilinearSample {
  double value = 0.0;
  // False when (x, y) fell outside [0, width-1] x [0, height-1]; the value
  // is then 0 by convention.
  bool in_bounds = false;
};

// Bilinear interpolation at (x, y); out-of-bounds points yield {0, false}.
BilinearSample sample_bilinear(const ImageGrid& img, double x, double y);

// Bilinear interpolation with (x, y) clamped into the image domain first.
double sample_bilinear_clamped(const ImageGrid& img, double x, double y);

// Spatial gradient of the bilinear interpolant at (x, y), defined as the
// zero-step limit of the symmetric difference of the sampled image. Off
// lattice lines this is the exact in-cell interpolant slope; exactly on a
// lattice line it averages the two adjacent cell slopes, which reproduces
// the classic central difference at integer pixels; at image borders it
// falls back to the one-sided cell slope. A fixed-step difference would
// smear across cell boundaries and bias Jacobians assembled from it.
// (x, y) is clamped into the image domain first.
Eigen::Vector2d sample_gradient(const ImageGrid& img, double x, double y);

// Binary 8-bit PGM ("P5") I/O. Intensities map linearly between byte values
// [0, maxval] and [0, 1]. read_pgm accepts '#' comments and any maxval in
// [1, 255] and throws IoError on malformed or truncated input; write_pgm
// emits maxval 255, rounding clamped intensities to the nearest byte.
ImageGrid read_pgm(const std::string& path);
void write_pgm(const ImageGrid& img, const std::string& path);

}  // namespace hmcgeo
