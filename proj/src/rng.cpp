#include "attnlq/rng.hpp"

#include <cmath>
#include <numbers>

namespace attnlq {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Philox4x32::Philox4x32(const SeedSpec& spec) {
  std::uint64_t h = splitmix64(spec.base_seed);
  for (std::uint64_t v : spec.stream_key) {
    h = splitmix64(h ^ splitmix64(v));
  }
  key_[0] = static_cast<std::uint32_t>(h);
  key_[1] = static_cast<std::uint32_t>(h >> 32);
}

std::array<std::uint32_t, 4> Philox4x32::next_block() {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  std::array<std::uint32_t, 4> x = counter_;
  std::array<std::uint32_t, 2> k = key_;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * x[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * x[2];
    const std::array<std::uint32_t, 4> y = {
        static_cast<std::uint32_t>(p1 >> 32) ^ x[1] ^ k[0],
        static_cast<std::uint32_t>(p1),
        static_cast<std::uint32_t>(p0 >> 32) ^ x[3] ^ k[1],
        static_cast<std::uint32_t>(p0),
    };
    x = y;
    k[0] += kWeyl0;
    k[1] += kWeyl1;
  }

  if (++counter_[0] == 0)
    if (++counter_[1] == 0)
      if (++counter_[2] == 0) ++counter_[3];
  return x;
}

double NormalStream::next_raw_uniform() {
  if (block_pos_ >= 3) {
    block_ = gen_.next_block();
    block_pos_ = 0;
  }
  const std::uint64_t hi = block_[block_pos_];
  const std::uint64_t lo = block_[block_pos_ + 1];
  block_pos_ += 2;
  const std::uint64_t bits = ((hi << 32) | lo) >> 11;  // 53 bits
  return static_cast<double>(bits + 1) * 0x1.0p-53;    // in (0, 1]
}

double NormalStream::uniform() { return next_raw_uniform(); }

double NormalStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = next_raw_uniform();
  const double u2 = next_raw_uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(phi);
  has_spare_ = true;
  return r * std::cos(phi);
}

Eigen::VectorXd NormalStream::normal_vector(int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal();
  return v;
}

Eigen::MatrixXd NormalStream::normal_matrix(int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = normal();
  return m;
}

}  // namespace attnlq
