#pragma once

#include <string>
#include <string_view>

#include "glassdb/common.hpp"

namespace glassdb::fileio {

[[noreturn]] void throw_errno(const std::string& what);
void write_all(int fd, std::string_view data, const std::string& path);
ByteString read_all(int fd, const std::string& path);
void make_dirs(const std::string& dir);
std::string join(const std::string& dir, std::string_view name);

}  // namespace glassdb::fileio
