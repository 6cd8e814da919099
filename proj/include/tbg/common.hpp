#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tbg {

using NodeIndex = std::uint32_t;
using DomainId = std::uint16_t;

enum class NodeKind : std::uint8_t { User = 0, Item = 1 };

inline char kind_char(NodeKind k) { return k == NodeKind::User ? 'u' : 'i'; }

// Error with a stable machine-readable code; the CLI maps these to JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Dense row-major matrix. All model state lives in these.
template <typename S>
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<S> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, S(0)) {}

  S* row(std::size_t i) { return a.data() + i * cols; }
  const S* row(std::size_t i) const { return a.data() + i * cols; }
  S& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  S operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  void fill(S v) { std::fill(a.begin(), a.end(), v); }
};

using Matrix = Mat<double>;
using Matrix32 = Mat<float>;

std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t seed = 0xcbf29ce484222325ull);

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

std::string hex64(std::uint64_t v);

}  // namespace tbg
