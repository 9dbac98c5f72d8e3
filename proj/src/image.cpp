#include "fedseg/image.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>

#include "fedseg/io.hpp"

namespace fedseg {

namespace {

ImageU8 decode_png(const std::string& bytes, const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw_io("cannot decode PNG " + path + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  ImageU8 out;
  out.h = static_cast<int>(image.height);
  out.w = static_cast<int>(image.width);
  out.rgb.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw_io("cannot decode PNG " + path + ": " + image.message);
  }
  return out;
}

struct JpegErr {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  JpegErr* err = reinterpret_cast<JpegErr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

ImageU8 decode_jpeg(const std::string& bytes, const std::string& path) {
  jpeg_decompress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  ImageU8 out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw_io("cannot decode JPEG " + path + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.h = static_cast<int>(cinfo.output_height);
  out.w = static_cast<int>(cinfo.output_width);
  out.rgb.resize(static_cast<std::size_t>(out.h) * static_cast<std::size_t>(out.w) * 3);
  const std::size_t stride = static_cast<std::size_t>(out.w) * 3;
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.rgb.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

ImageU8 decode_image_file(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 8 &&
      std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) == 0) {
    return decode_png(bytes, path);
  }
  if (bytes.size() >= 3 && std::memcmp(bytes.data(), "\xFF\xD8\xFF", 3) == 0) {
    return decode_jpeg(bytes, path);
  }
  throw_io("unsupported image format (expected PNG or JPEG): " + path);
}

void encode_png(const std::string& path, const ImageU8& img) {
  if (img.h <= 0 || img.w <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(img.h) *
                            static_cast<std::size_t>(img.w) * 3) {
    throw_validation("encode_png: invalid image buffer for " + path);
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.w);
  image.height = static_cast<png_uint_32>(img.h);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.rgb.data(), 0,
                                 nullptr)) {
    throw_io("cannot encode PNG " + path + ": " + image.message);
  }
  std::vector<char> buf(size);
  if (!png_image_write_to_memory(&image, buf.data(), &size, 0, img.rgb.data(),
                                 0, nullptr)) {
    throw_io("cannot encode PNG " + path + ": " + image.message);
  }
  atomic_write_file(path, buf.data(), size);
}

Tensor image_to_float(const ImageU8& img, double rescale) {
  Tensor out({img.h, img.w, 3});
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(img.rgb[static_cast<std::size_t>(i)] * rescale);
  }
  return out;
}

ImageU8 float_to_image(const Tensor& hw3) {
  if (hw3.rank() != 3 || hw3.dim(2) != 3) {
    throw_validation("float_to_image: expected HxWx3, got " + hw3.shape_str());
  }
  ImageU8 out;
  out.h = static_cast<int>(hw3.dim(0));
  out.w = static_cast<int>(hw3.dim(1));
  out.rgb.resize(static_cast<std::size_t>(hw3.size()));
  for (std::int64_t i = 0; i < hw3.size(); ++i) {
    float v = hw3[i];
    v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    out.rgb[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(v * 255.0f + 0.5f);
  }
  return out;
}

Tensor resize_bilinear(const Tensor& hw3, int out_h, int out_w) {
  if (hw3.rank() != 3) {
    throw_validation("resize: expected HxWxC, got " + hw3.shape_str());
  }
  if (out_h <= 0 || out_w <= 0) {
    throw_validation("resize: output extents must be positive");
  }
  const std::int64_t in_h = hw3.dim(0), in_w = hw3.dim(1), c = hw3.dim(2);
  Tensor out({out_h, out_w, c});
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    std::int64_t y0 = static_cast<std::int64_t>(fy);
    if (y0 > in_h - 1) y0 = in_h - 1;
    const std::int64_t y1 = y0 + 1 < in_h ? y0 + 1 : in_h - 1;
    const double wy = fy - static_cast<double>(y0);
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      std::int64_t x0 = static_cast<std::int64_t>(fx);
      if (x0 > in_w - 1) x0 = in_w - 1;
      const std::int64_t x1 = x0 + 1 < in_w ? x0 + 1 : in_w - 1;
      const double wx = fx - static_cast<double>(x0);
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const double v00 = hw3[(y0 * in_w + x0) * c + ci];
        const double v01 = hw3[(y0 * in_w + x1) * c + ci];
        const double v10 = hw3[(y1 * in_w + x0) * c + ci];
        const double v11 = hw3[(y1 * in_w + x1) * c + ci];
        const double top = v00 * (1.0 - wx) + v01 * wx;
        const double bot = v10 * (1.0 - wx) + v11 * wx;
        out[(oy * out_w + ox) * c + ci] =
            static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Tensor resize_nearest(const Tensor& hw3, int out_h, int out_w) {
  if (hw3.rank() != 3) {
    throw_validation("resize: expected HxWxC, got " + hw3.shape_str());
  }
  if (out_h <= 0 || out_w <= 0) {
    throw_validation("resize: output extents must be positive");
  }
  const std::int64_t in_h = hw3.dim(0), in_w = hw3.dim(1), c = hw3.dim(2);
  Tensor out({out_h, out_w, c});
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (std::int64_t oy = 0; oy < out_h; ++oy) {
    std::int64_t y = static_cast<std::int64_t>((static_cast<double>(oy) + 0.5) * sy);
    if (y > in_h - 1) y = in_h - 1;
    for (std::int64_t ox = 0; ox < out_w; ++ox) {
      std::int64_t x = static_cast<std::int64_t>((static_cast<double>(ox) + 0.5) * sx);
      if (x > in_w - 1) x = in_w - 1;
      for (std::int64_t ci = 0; ci < c; ++ci) {
        out[(oy * out_w + ox) * c + ci] = hw3[(y * in_w + x) * c + ci];
      }
    }
  }
  return out;
}

}  // namespace fedseg
