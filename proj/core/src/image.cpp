#include "replan/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "replan/errors.hpp"

namespace replan {

std::int64_t Mask::count() const {
  std::int64_t n = 0;
  for (auto v : data) n += v != 0;
  return n;
}

std::uint8_t quantize_unit(double v) {
  return std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

torch::Tensor to_tensor(const Image& image) {
  auto t = torch::empty({image.channels, image.height, image.width}, torch::kFloat32);
  float* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < image.data.size(); ++i) p[i] = float(image.data[i]) / 255.0f;
  return t;
}

torch::Tensor to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("to_batch: empty image list");
  const auto& f = *images.front();
  auto t = torch::empty({std::int64_t(images.size()), f.channels, f.height, f.width}, torch::kFloat32);
  float* p = t.data_ptr<float>();
  const std::size_t n = f.data.size();
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& im = *images[b];
    if (im.channels != f.channels || im.height != f.height || im.width != f.width)
      throw ShapeError("to_batch: images differ in shape");
    for (std::size_t i = 0; i < n; ++i) p[b * n + i] = float(im.data[i]) / 255.0f;
  }
  return t;
}

Image from_tensor(const torch::Tensor& tensor) {
  torch::Tensor t = tensor.detach().to(torch::kFloat64).cpu();
  if (t.dim() == 4) {
    if (t.size(0) != 1) throw ShapeError("from_tensor: expected a single image");
    t = t[0];
  }
  if (t.dim() != 3) throw ShapeError("from_tensor: expected [C,H,W]");
  t = t.contiguous();
  Image out(int(t.size(0)), int(t.size(1)), int(t.size(2)));
  const double* p = t.data_ptr<double>();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = quantize_unit(p[i]);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw ShapeError("write_png: only 1 or 3 channel images are supported");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(std::size_t(image.width) * image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) row[std::size_t(x) * image.channels + c] = image.at(c, y, x);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError("cannot open '" + path.string() + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_read_update_info(png, info);
  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  const int c = int(png_get_channels(png, info));
  Image out(c, h, w);
  std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) out.at(ch, y, x) = row[std::size_t(x) * c + ch];
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

Image hstack(const std::vector<Image>& images) {
  if (images.empty()) return {};
  const int h = images.front().height;
  const int c = images.front().channels;
  int w = 0;
  for (const auto& im : images) {
    if (im.height != h || im.channels != c) throw ShapeError("hstack: images differ in height");
    w += im.width + 1;
  }
  Image out(c, h, w - 1);
  std::fill(out.data.begin(), out.data.end(), 255);
  int x0 = 0;
  for (const auto& im : images) {
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < im.width; ++x) out.at(ch, y, x0 + x) = im.at(ch, y, x);
    x0 += im.width + 1;
  }
  return out;
}

}  // namespace replan
