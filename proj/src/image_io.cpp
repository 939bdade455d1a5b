#include "posfeat/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <vector>

namespace posfeat {

Image quantize8(const Image& image) {
  return (image.cwiseMax(0.0f).cwiseMin(1.0f) * 255.0f).round() / 255.0f;
}

void write_pgm(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<std::size_t>(image.size()));
  const Image q = (image.cwiseMax(0.0f).cwiseMin(1.0f) * 255.0f).round();
  for (Eigen::Index i = 0; i < q.size(); ++i) bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(q(i));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path);
}

namespace {

int read_header_int(std::istream& in) {
  int c = in.peek();
  while (c == '#' || std::isspace(c)) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = 0;
  if (!(in >> v)) throw FormatError("image: malformed header");
  return v;
}

}  // namespace

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  char magic[2] = {};
  if (!in.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw FormatError("image: only binary PGM (P5) and PPM (P6) are supported: " + path);
  const int channels = magic[1] == '5' ? 1 : 3;
  const int width = read_header_int(in);
  const int height = read_header_int(in);
  const int maxval = read_header_int(in);
  if (width <= 0 || height <= 0 || width > 1 << 15 || height > 1 << 15 || maxval <= 0 || maxval > 65535)
    throw FormatError("image: bad header in " + path);
  in.get();
  const int bytes_per = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> buf(static_cast<std::size_t>(width) * height * channels * bytes_per);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw FormatError("image: truncated data in " + path);
  auto sample = [&](std::size_t i) -> float {
    if (bytes_per == 1) return buf[i];
    return static_cast<float>((buf[2 * i] << 8) | buf[2 * i + 1]);
  };
  Image img(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const std::size_t base = (static_cast<std::size_t>(r) * width + c) * channels;
      float v = channels == 1 ? sample(base)
                              : 0.299f * sample(base) + 0.587f * sample(base + 1) + 0.114f * sample(base + 2);
      img(r, c) = v / static_cast<float>(maxval);
    }
  }
  return img;
}

Image crop_to_multiple(const Image& image, int multiple) {
  if (multiple < 1) throw InputError("crop_to_multiple: multiple must be positive");
  const Eigen::Index h = image.rows() / multiple * multiple;
  const Eigen::Index w = image.cols() / multiple * multiple;
  if (h == 0 || w == 0) throw InputError("crop_to_multiple: image smaller than one block");
  return image.topLeftCorner(h, w);
}

}  // namespace posfeat
