#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "geneic/geneic.hpp"

namespace geneic::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("geneic_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ImageSample random_image(std::mt19937_64& g, const DimSpec& d, std::string id = "x") {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageSample img(std::move(id), d.image_height, d.image_width, d.image_channels);
  for (auto& p : img.pixels) p = u(g);
  return img;
}

inline Matrix random_matrix(std::mt19937_64& g, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = n(g);
  return m;
}

inline Vector random_vector(std::mt19937_64& g, int n, double scale = 1.0) {
  return random_matrix(g, n, 1, scale).col(0);
}

inline PromptState random_prompt(std::mt19937_64& g, int m, int d, double scale) {
  return {random_matrix(g, m, d, scale), 0};
}

// Vocabulary whose words are their own ids ("<eos>", "1", "2", ...).
inline std::vector<std::string> numeric_words(int vocab) {
  std::vector<std::string> w{"<eos>"};
  for (int i = 1; i < vocab; ++i) w.push_back(std::to_string(i));
  return w;
}

inline double rel_error(const Matrix& a, const Matrix& b) {
  const double denom = std::max(a.norm(), b.norm());
  return denom > 0.0 ? (a - b).norm() / denom : 0.0;
}

}  // namespace geneic::testing
