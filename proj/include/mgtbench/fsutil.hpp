#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "mgtbench/errors.hpp"

namespace mgtbench::fs {

namespace stdfs = std::filesystem;

inline std::string read_file(const stdfs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to a sibling temp file and renames over the target, so readers only
// ever observe a complete file.
inline void atomic_write(const stdfs::path& path, std::string_view contents) {
  if (path.has_parent_path()) stdfs::create_directories(path.parent_path());
  stdfs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw InputError("short write to '" + tmp.string() + "'");
  }
  stdfs::rename(tmp, path);
}

}  // namespace mgtbench::fs
