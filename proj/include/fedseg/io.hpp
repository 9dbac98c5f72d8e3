#pragma once

#include <string>
#include <vector>

namespace fedseg {

std::string read_file(const std::string& path);

// Writes to <path>.tmp.<pid> then renames, so partially written outputs are
// never observed under the final name.
void atomic_write_file(const std::string& path, const std::string& contents);
void atomic_write_file(const std::string& path, const void* data,
                       std::size_t size);

void ensure_directory(const std::string& path);
bool path_exists(const std::string& path);
std::string dirname_of(const std::string& path);
std::string join_path(const std::string& a, const std::string& b);

// Fixed-width decimal used everywhere a metric lands in a CSV, so repeated
// seeded runs produce identical bytes.
std::string csv_num(double v);

}  // namespace fedseg
