#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <unistd.h>

#include "gradcheck.hpp"
#include "nirvis/image.hpp"
#include "nirvis/ops.hpp"
#include "nirvis/rng.hpp"
#include "nirvis/tensor.hpp"

namespace nirvis::test {

inline Raster random_raster(int h, int w, int c, Rng& rng, ColorSpace cs = ColorSpace::RGB) {
  Raster r(h, w, c, cs);
  for (auto& v : r.storage()) v = static_cast<float>(rng.uniform());
  return r;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() / ("nirvis_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace nirvis::test
