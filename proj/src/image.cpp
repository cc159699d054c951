#include "hmcgeo/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "hmcgeo/errors.hpp"

namespace hmcgeo {

namespace {

std::string describe(const char* what, Eigen::Index w, Eigen::Index h) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s (image %ld x %ld)", what, static_cast<long>(w),
                static_cast<long>(h));
  return buf;
}

// d/dx of the bilinear interpolant on the cell column [x0, x0+1] at height y.
// The slope is constant in x inside the cell and linear in y.
double cell_slope_x(const ImageGrid& img, Eigen::Index x0, double y) {
  x0 = std::clamp<Eigen::Index>(x0, 0, img.width - 2);
  Eigen::Index y0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(y)),
                                           img.height - 1);
  Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, img.height - 1);
  double fy = y - static_cast<double>(y0);
  double lo = img.at(x0 + 1, y0) - img.at(x0, y0);
  double hi = img.at(x0 + 1, y1) - img.at(x0, y1);
  return lo * (1.0 - fy) + hi * fy;
}

double cell_slope_y(const ImageGrid& img, Eigen::Index y0, double x) {
  y0 = std::clamp<Eigen::Index>(y0, 0, img.height - 2);
  Eigen::Index x0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(x)),
                                           img.width - 1);
  Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, img.width - 1);
  double fx = x - static_cast<double>(x0);
  double lo = img.at(x0, y0 + 1) - img.at(x0, y0);
  double hi = img.at(x1, y0 + 1) - img.at(x1, y0);
  return lo * (1.0 - fx) + hi * fx;
}

// Skips whitespace and '#' comment lines between PGM header tokens.
void skip_pgm_separators(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      in.get();
    } else {
      return;
    }
  }
}

long read_pgm_number(std::istream& in, const char* what) {
  skip_pgm_separators(in);
  long value = 0;
  if (!(in >> value) || value <= 0) {
    throw IoError(std::string("pgm header: invalid ") + what);
  }
  return value;
}

}  // namespace

ImageGrid ImageGrid::zeros(Eigen::Index width, Eigen::Index height) {
  ImageGrid img;
  img.width = width;
  img.height = height;
  img.intensities = Eigen::VectorXd::Zero(width * height);
  img.validate();
  return img;
}

void ImageGrid::validate() const {
  if (width <= 0 || height <= 0) {
    throw ArgumentError(describe("image dimensions must be positive", width, height));
  }
  if (intensities.size() != width * height) {
    throw ArgumentError(describe("intensity array length must equal width*height",
                                 width, height));
  }
  for (Eigen::Index i = 0; i < intensities.size(); ++i) {
    double v = intensities[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ArgumentError(describe("intensities must be finite and in [0, 1]",
                                   width, height));
    }
  }
}

BilinearSample sample_bilinear(const ImageGrid& img, double x, double y) {
  double wmax = static_cast<double>(img.width - 1);
  double hmax = static_cast<double>(img.height - 1);
  if (!(x >= 0.0 && x <= wmax && y >= 0.0 && y <= hmax)) {
    return {0.0, false};
  }
  Eigen::Index x0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(x)),
                                           img.width - 1);
  Eigen::Index y0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(y)),
                                           img.height - 1);
  Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, img.width - 1);
  Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, img.height - 1);
  double fx = x - static_cast<double>(x0);
  double fy = y - static_cast<double>(y0);
  double value = img.at(x0, y0) * (1.0 - fx) * (1.0 - fy) +
                 img.at(x1, y0) * fx * (1.0 - fy) +
                 img.at(x0, y1) * (1.0 - fx) * fy + img.at(x1, y1) * fx * fy;
  return {value, true};
}

double sample_bilinear_clamped(const ImageGrid& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  return sample_bilinear(img, x, y).value;
}

Eigen::Vector2d sample_gradient(const ImageGrid& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  Eigen::Index xf = static_cast<Eigen::Index>(std::floor(x));
  Eigen::Index yf = static_cast<Eigen::Index>(std::floor(y));

  double gx = 0.0;
  if (img.width > 1) {
    if (x - static_cast<double>(xf) > 0.0) {
      gx = cell_slope_x(img, xf, y);
    } else if (xf == 0) {
      gx = cell_slope_x(img, 0, y);
    } else if (xf == img.width - 1) {
      gx = cell_slope_x(img, img.width - 2, y);
    } else {
      gx = 0.5 * (cell_slope_x(img, xf - 1, y) + cell_slope_x(img, xf, y));
    }
  }

  double gy = 0.0;
  if (img.height > 1) {
    if (y - static_cast<double>(yf) > 0.0) {
      gy = cell_slope_y(img, yf, x);
    } else if (yf == 0) {
      gy = cell_slope_y(img, 0, x);
    } else if (yf == img.height - 1) {
      gy = cell_slope_y(img, img.height - 2, x);
    } else {
      gy = 0.5 * (cell_slope_y(img, yf - 1, x) + cell_slope_y(img, yf, x));
    }
  }
  return {gx, gy};
}

ImageGrid read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open image file: " + path);
  }
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') {
    throw IoError("not a binary PGM (P5) file: " + path);
  }
  long width = read_pgm_number(in, "width");
  long height = read_pgm_number(in, "height");
  long maxval = read_pgm_number(in, "maxval");
  if (maxval > 255) {
    throw IoError("pgm header: maxval above 255 is unsupported: " + path);
  }
  // Exactly one whitespace byte separates the header from the raster.
  int sep = in.get();
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n') {
    throw IoError("pgm header: missing raster separator: " + path);
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IoError("pgm raster truncated: " + path);
  }

  ImageGrid img;
  img.width = width;
  img.height = height;
  img.intensities.resize(width * height);
  for (Eigen::Index i = 0; i < img.intensities.size(); ++i) {
    img.intensities[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
  }
  img.validate();
  return img;
}

void write_pgm(const ImageGrid& img, const std::string& path) {
  img.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open image file for writing: " + path);
  }
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.intensities.size()));
  for (Eigen::Index i = 0; i < img.intensities.size(); ++i) {
    double v = std::clamp(img.intensities[i], 0.0, 1.0);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) {
    throw IoError("failed writing pgm raster: " + path);
  }
}

}  // namespace hmcgeo
