#pragma once

// Atomic file writes: write to a sibling temp file, then rename over the
// target. No output file is ever observable half-written.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "kern/common.hpp"

namespace kern::io {

inline void atomic_write(const std::string& path,
                         const std::function<void(std::ostream&)>& writer) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write file: " + tmp);
    writer(out);
    out.flush();
    if (!out) throw IoError("failed writing file: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
  }
}

}  // namespace kern::io
