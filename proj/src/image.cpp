#include "m6/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <png.h>

namespace m6::img {

namespace {

Image load_png(const std::filesystem::path& path) {
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng init failed");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error(path.string() + ": PNG decode failed");
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  // normalize everything to 8-bit RGB
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  row_ptrs.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = pixels.data() + y * stride;
  png_read_image(png, row_ptrs.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  Image out;
  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  out.rgb.resize(3ull * w * h);
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.rgb[(y * w + x) * 3 + c] = pixels[y * stride + x * 3 + c] / 255.0;
  return out;
}

int next_ppm_int(std::istream& is) {
  // skips whitespace and '#' comments between values
  for (;;) {
    int ch = is.peek();
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
  }
  int v;
  if (!(is >> v)) throw std::runtime_error("PPM: expected integer");
  return v;
}

Image load_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  char m0 = 0, m1 = 0;
  is.get(m0).get(m1);
  bool binary = (m0 == 'P' && m1 == '6');
  if (!binary && !(m0 == 'P' && m1 == '3'))
    throw std::runtime_error(path.string() + ": not a P3/P6 PPM");
  int w = next_ppm_int(is);
  int h = next_ppm_int(is);
  int maxval = next_ppm_int(is);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw std::runtime_error(path.string() + ": bad PPM header");
  Image out;
  out.width = w;
  out.height = h;
  out.rgb.resize(3ull * w * h);
  if (binary) {
    is.get();  // single whitespace after maxval
    int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(3ull * w * h * bytes);
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (!is) throw std::runtime_error(path.string() + ": truncated PPM");
    for (std::size_t i = 0; i < out.rgb.size(); ++i) {
      int v = bytes == 1 ? buf[i] : (buf[2 * i] << 8 | buf[2 * i + 1]);
      out.rgb[i] = static_cast<double>(v) / maxval;
    }
  } else {
    for (std::size_t i = 0; i < out.rgb.size(); ++i) {
      int v = next_ppm_int(is);
      if (v < 0 || v > maxval)
        throw std::runtime_error(path.string() + ": PPM sample out of range");
      out.rgb[i] = static_cast<double>(v) / maxval;
    }
  }
  return out;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open " + path.string());
  unsigned char sig[8] = {};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (png_sig_cmp(sig, 0, 8) == 0) return load_png(path);
  if (sig[0] == 'P' && (sig[1] == '3' || sig[1] == '6')) return load_ppm(path);
  throw std::runtime_error(path.string() + ": unsupported image format");
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P3\n" << image.width << ' ' << image.height << "\n255\n";
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
        os << static_cast<int>(std::lround(v * 255.0));
        os << (c < 2 ? ' ' : (x + 1 < image.width ? '\t' : '\n'));
      }
    }
  }
  if (!os) throw std::runtime_error("short write to " + path.string());
}

Image resize_bilinear(const Image& image, int side) {
  if (image.width <= 0 || image.height <= 0 || image.rgb.empty())
    throw std::invalid_argument("resize_bilinear: empty image");
  if (side <= 0) throw std::invalid_argument("resize_bilinear: bad side");
  Image out;
  out.width = side;
  out.height = side;
  out.rgb.resize(3ull * side * side);
  double sx = static_cast<double>(image.width) / side;
  double sy = static_cast<double>(image.height) / side;
  for (int y = 0; y < side; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int ya = std::clamp(y0, 0, image.height - 1);
    int yb = std::clamp(y0 + 1, 0, image.height - 1);
    for (int x = 0; x < side; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int xa = std::clamp(x0, 0, image.width - 1);
      int xb = std::clamp(x0 + 1, 0, image.width - 1);
      for (int c = 0; c < 3; ++c) {
        double top = image.at(ya, xa, c) * (1 - wx) + image.at(ya, xb, c) * wx;
        double bot = image.at(yb, xa, c) * (1 - wx) + image.at(yb, xb, c) * wx;
        out.at(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Image load_and_resize(const std::filesystem::path& path, int side) {
  return resize_bilinear(load_image(path), side);
}

}  // namespace m6::img
