#include "fedseg/io.hpp"

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedseg/common.hpp"

namespace fs = std::filesystem;

namespace fedseg {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot open file for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw_io("read failed: " + path);
  return ss.str();
}

void atomic_write_file(const std::string& path, const void* data,
                       std::size_t size) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw_io("cannot open file for writing: " + tmp);
    out.write(static_cast<const char*>(data),
              static_cast<std::streamsize>(size));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw_io("write failed: " + tmp);
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw_io("rename failed for " + path + ": " + ec.message());
  }
}

void atomic_write_file(const std::string& path, const std::string& contents) {
  atomic_write_file(path, contents.data(), contents.size());
}

void ensure_directory(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw_io("cannot create directory " + path + ": " + ec.message());
}

bool path_exists(const std::string& path) {
  std::error_code ec;
  return fs::exists(path, ec);
}

std::string dirname_of(const std::string& path) {
  const fs::path p(path);
  auto parent = p.parent_path();
  return parent.empty() ? std::string(".") : parent.string();
}

std::string join_path(const std::string& a, const std::string& b) {
  if (b.empty()) return a;
  if (fs::path(b).is_absolute()) return b;
  return (fs::path(a) / b).string();
}

std::string csv_num(double v) { return strfmt("%.6f", v); }

}  // namespace fedseg
