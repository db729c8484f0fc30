#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "flood/tensor.hpp"

namespace testing {

template <typename T = double>
flood::Tensor<T> rnd(flood::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return flood::seeded_random<T>(shape, seed, flood::UniformDist{lo, hi});
}

template <typename T>
std::vector<T> values(const flood::Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("flood_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing

#include <unistd.h>
