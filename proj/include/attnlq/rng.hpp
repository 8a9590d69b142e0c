#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace attnlq {

/// Identifies one reproducible random stream. Equal specs reproduce the
/// stream bit-exactly; distinct stream keys give independent streams,
/// so parallel workers never share generator state.
struct SeedSpec {
  std::uint64_t base_seed = 0;
  std::vector<std::uint64_t> stream_key;

  SeedSpec with(std::uint64_t extra) const {
    SeedSpec s = *this;
    s.stream_key.push_back(extra);
    return s;
  }
};

std::uint64_t splitmix64(std::uint64_t x);

/// Philox4x32-10 counter-based generator. The key is derived by hashing
/// (base_seed, stream_key); the counter starts at zero and only moves
/// forward, so output depends on nothing but the seed spec.
class Philox4x32 {
 public:
  explicit Philox4x32(const SeedSpec& spec);

  std::array<std::uint32_t, 4> next_block();

 private:
  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> counter_{};
};

/// Standard-normal stream on top of Philox (Box-Muller over 53-bit
/// uniforms). Deterministic across platforms and thread schedules.
class NormalStream {
 public:
  explicit NormalStream(const SeedSpec& spec) : gen_(spec) {}

  double uniform();          // in (0, 1]
  double normal();
  Eigen::VectorXd normal_vector(int dim);
  Eigen::MatrixXd normal_matrix(int rows, int cols);  // filled row by row

 private:
  double next_raw_uniform();

  Philox4x32 gen_;
  std::array<std::uint32_t, 4> block_{};
  int block_pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace attnlq
