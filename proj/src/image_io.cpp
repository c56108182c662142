#include "asap/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "asap/errors.hpp"

namespace asap {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

void no_flush(png_structp) {}

}  // namespace

std::vector<uint8_t> encode_png(const ImageU8& img) {
  if (img.h <= 0 || img.w <= 0 ||
      img.px.size() != static_cast<size_t>(img.h) * img.w * 3)
    throw InputError("encode_png: bad image buffer");

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ConfigError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ConfigError("png_create_info_struct failed");
  }

  std::vector<uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ConfigError("png encode failed");
  }
  png_set_write_fn(png, &out, append_bytes, no_flush);
  // Pinned settings keep the byte stream reproducible.
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.h; ++y)
    png_write_row(png,
                  const_cast<png_bytep>(img.px.data() +
                                        static_cast<size_t>(y) * img.w * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::string& path, const ImageU8& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("short write: " + path);
}

ImageU8 read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw ConfigError("cannot open: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    std::fclose(fp);
    throw ConfigError("png_create_read_struct failed");
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    std::fclose(fp);
    throw ConfigError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw SchemaError("png decode failed: " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  // Normalize every input to 8-bit RGB.
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  ImageU8 img(static_cast<int>(png_get_image_height(png, info)),
              static_cast<int>(png_get_image_width(png, info)));
  std::vector<png_bytep> rows(static_cast<size_t>(img.h));
  for (int y = 0; y < img.h; ++y)
    rows[static_cast<size_t>(y)] =
        img.px.data() + static_cast<size_t>(y) * img.w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace asap
