#include "ctlgan/image_io.hpp"

#include "ctlgan/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace fs = std::filesystem;

namespace ctlgan {

namespace {

std::string lower_extension(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

torch::Tensor decode_png(const fs::path& file) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, file.c_str())) {
    throw InvalidData("cannot decode PNG " + file.string() + ": " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const int64_t c = gray ? 1 : 3;
  auto hwc = torch::empty({static_cast<int64_t>(img.height), static_cast<int64_t>(img.width), c}, torch::kUInt8);
  if (!png_image_finish_read(&img, nullptr, hwc.data_ptr<uint8_t>(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw InvalidData("cannot decode PNG " + file.string() + ": " + msg);
  }
  return hwc.permute({2, 0, 1}).contiguous();
}

int64_t read_pnm_int(std::istream& in) {
  int64_t value = 0;
  in >> std::ws;
  while (in.peek() == '#') {
    std::string line;
    std::getline(in, line);
    in >> std::ws;
  }
  if (!(in >> value)) throw InvalidData("malformed PNM header");
  return value;
}

torch::Tensor decode_pnm(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InvalidData("cannot open " + file.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6" && magic != "P5") throw InvalidData("unsupported PNM variant in " + file.string());
  const int64_t c = magic == "P6" ? 3 : 1;
  const int64_t w = read_pnm_int(in), h = read_pnm_int(in), maxval = read_pnm_int(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw InvalidData("unsupported PNM geometry in " + file.string());
  in.get();
  auto hwc = torch::empty({h, w, c}, torch::kUInt8);
  in.read(reinterpret_cast<char*>(hwc.data_ptr<uint8_t>()), static_cast<std::streamsize>(hwc.numel()));
  if (in.gcount() != hwc.numel()) throw InvalidData("truncated PNM " + file.string());
  return hwc.permute({2, 0, 1}).contiguous();
}

}  // namespace

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("image directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = lower_extension(entry.path());
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

torch::Tensor decode_image(const fs::path& file) {
  const auto ext = lower_extension(file);
  if (ext == ".png") return decode_png(file);
  if (ext == ".ppm" || ext == ".pgm") return decode_pnm(file);
  throw InvalidData("unsupported image format: " + file.string());
}

torch::Tensor prepare_image(const torch::Tensor& raw, int64_t resolution, int64_t channels) {
  if (raw.dim() != 3) throw InvalidData("expected a [C, H, W] image");
  auto img = raw.to(torch::kFloat32);
  if (img.size(0) == 1 && channels == 3) img = img.expand({3, -1, -1});
  if (img.size(0) == 3 && channels == 1) {
    img = (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]).unsqueeze(0);
  }
  if (img.size(0) != channels) throw InvalidData("unsupported channel count");
  const int64_t h = img.size(1), w = img.size(2), side = std::min(h, w);
  img = img.slice(1, (h - side) / 2, (h - side) / 2 + side).slice(2, (w - side) / 2, (w - side) / 2 + side);
  img = img.unsqueeze(0);
  if (side != resolution) {
    namespace F = torch::nn::functional;
    img = F::interpolate(img, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{resolution, resolution})
                                  .mode(torch::kBilinear)
                                  .align_corners(false)
                                  .antialias(side > resolution));
  }
  return (img.squeeze(0) / 127.5 - 1.0).clamp(-1.0, 1.0).contiguous();
}

torch::Tensor load_image(const fs::path& file, int64_t resolution, int64_t channels) {
  return prepare_image(decode_image(file), resolution, channels);
}

torch::Tensor load_image_dir(const fs::path& dir, int64_t resolution, int64_t channels) {
  std::vector<torch::Tensor> images;
  for (const auto& f : list_images(dir)) images.push_back(load_image(f, resolution, channels));
  if (images.empty()) return torch::empty({0, channels, resolution, resolution});
  return torch::stack(images);
}

torch::Tensor to_uint8(const torch::Tensor& image) {
  auto scaled = (image.detach().to(torch::kFloat64).clamp(-1.0, 1.0) + 1.0) * 127.5;
  return torch::floor(scaled + 0.5).clamp(0, 255).to(torch::kUInt8);
}

void write_png(const fs::path& file, const torch::Tensor& image) {
  if (image.dim() != 3 || (image.size(0) != 1 && image.size(0) != 3)) {
    throw InvalidArgument("write_png expects a [1|3, H, W] image");
  }
  auto hwc = to_uint8(image).permute({1, 2, 0}).contiguous();
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(hwc.size(1));
  img.height = static_cast<png_uint_32>(hwc.size(0));
  img.format = image.size(0) == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  if (!png_image_write_to_file(&img, file.c_str(), 0, hwc.data_ptr<uint8_t>(), 0, nullptr)) {
    throw ConfigError("cannot write " + file.string() + ": " + img.message);
  }
}

std::vector<fs::path> write_images(const fs::path& dir, const torch::Tensor& images, const std::string& prefix) {
  fs::create_directories(dir);
  std::vector<fs::path> out;
  for (int64_t i = 0; i < images.size(0); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "_%05lld.png", static_cast<long long>(i));
    out.push_back(dir / (prefix + name));
    write_png(out.back(), images[i]);
  }
  return out;
}

torch::Tensor make_grid(const torch::Tensor& images, int64_t cols) {
  if (images.dim() != 4) throw InvalidArgument("make_grid expects [N, C, H, W]");
  const int64_t n = images.size(0);
  if (n == 0) throw InvalidArgument("make_grid needs at least one image");
  if (cols <= 0) cols = static_cast<int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int64_t rows = (n + cols - 1) / cols, h = images.size(2), w = images.size(3);
  auto grid = torch::full({images.size(1), rows * h, cols * w}, -1.0, images.options());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t r = i / cols, c = i % cols;
    grid.slice(1, r * h, (r + 1) * h).slice(2, c * w, (c + 1) * w).copy_(images[i]);
  }
  return grid;
}

}  // namespace ctlgan
