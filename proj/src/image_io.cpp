#include "clipstrike/image_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

#include <jpeglib.h>

namespace clipstrike {

namespace {

Tensor<Real> from_interleaved_rgb(const std::vector<unsigned char>& pixels, Index height,
                                  Index width) {
  Tensor<Real> out(Shape{1, 3, height, width});
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const std::size_t base = static_cast<std::size_t>((y * width + x) * 3);
      for (Index c = 0; c < 3; ++c) out(0, c, y, x) = pixels[base + static_cast<std::size_t>(c)] / 255.0;
    }
  }
  return out;
}

std::string lowercase_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace

Tensor<Real> read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> pixels(PNG_IMAGE_SIZE(image));
  const png_color white = {255, 255, 255};
  if (!png_image_finish_read(&image, &white, pixels.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + message);
  }
  return from_interleaved_rgb(pixels, image.height, image.width);
}

Tensor<Real> read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw std::runtime_error("cannot open " + path.string());

  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<unsigned char> pixels;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error("cannot decode JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const Index width = cinfo.output_width;
  const Index height = cinfo.output_height;
  pixels.resize(static_cast<std::size_t>(width * height * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_interleaved_rgb(pixels, height, width);
}

Tensor<Real> read_image(const std::filesystem::path& path) {
  // The signature wins over the extension; mislabelled files are common in scraped sets.
  unsigned char magic[2] = {0, 0};
  if (std::FILE* f = std::fopen(path.c_str(), "rb")) {
    const std::size_t got = std::fread(magic, 1, 2, f);
    std::fclose(f);
    if (got == 2 && magic[0] == 0x89 && magic[1] == 'P') return read_png(path);
    if (got == 2 && magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg(path);
  }
  const std::string ext = lowercase_extension(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  return read_png(path);
}

void write_png(const std::filesystem::path& path, const Tensor<Real>& image, Index index) {
  if (image.c() != 1 && image.c() != 3) {
    throw ShapeError("write_png: unsupported channel count " + std::to_string(image.c()));
  }
  const Index h = image.h(), w = image.w(), c = image.c();
  std::vector<unsigned char> pixels(static_cast<std::size_t>(h * w * c));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image(index, ch, y, x), 0.0, 1.0);
        pixels[static_cast<std::size_t>((y * w + x) * c + ch)] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  png_image out;
  std::memset(&out, 0, sizeof(out));
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(w);
  out.height = static_cast<png_uint_32>(h);
  out.format = (c == 3) ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&out, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + out.message);
  }
}

}  // namespace clipstrike
