#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "oracles/oracles.hpp"
#include "softmcl/affect_data.hpp"
#include "softmcl/tensor.hpp"
#include "softmcl/trainer.hpp"

namespace fixtures {

inline softmcl::Tensor to_tensor(const oracle::Matrix& m) {
  std::vector<double> flat;
  for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return softmcl::Tensor({m.size(), m.empty() ? 0 : m.front().size()}, std::move(flat));
}

inline oracle::Matrix to_matrix(const softmcl::Tensor& t) {
  oracle::Matrix m(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) m[r].assign(t.row(r).begin(), t.row(r).end());
  return m;
}

inline std::vector<softmcl::ValenceRating> ratings(const std::vector<double>& v) {
  std::vector<softmcl::ValenceRating> out;
  for (double x : v) out.emplace_back(x);
  return out;
}

inline softmcl::Tensor random_tensor(std::mt19937_64& rng, softmcl::Shape shape, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  softmcl::Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("softmcl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// A tiny encoder/optimizer setup that trains in milliseconds per step.
inline softmcl::TrainConfig tiny_config() {
  softmcl::TrainConfig c;
  c.hidden_dim = 16;
  c.n_heads = 2;
  c.ffn_dim = 32;
  c.n_layers = 1;
  c.max_len = 16;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.total_steps = 100;
  c.queue_capacity = 32;
  c.word_cl_sample = 32;
  c.seed = 7;
  return c;
}

}  // namespace fixtures
