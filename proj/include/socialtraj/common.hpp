#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace socialtraj {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kHalfPi = kPi / 2.0;

// Error taxonomy. Every failure surfaced to callers derives from Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : Error { using Error::Error; };
struct MalformedInputError : Error { using Error::Error; };
struct UnsupportedRateError : Error { using Error::Error; };
struct NumericInputError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct UndefinedOrientationError : Error { using Error::Error; };
struct UndefinedMetricError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct PathError : Error { using Error::Error; };
struct UsageError : Error { using Error::Error; };
struct CheckpointError : Error { using Error::Error; };
struct VersionMismatchError : CheckpointError { using CheckpointError::CheckpointError; };

// Seeded random stream. Streams derived from (seed, a, b) are independent of
// the order in which they are created, which keeps parallel work reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0);

  double gauss() { return normal_(eng_); }
  double uniform() { return unif_(eng_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unif_(eng_); }
  // Integer in [lo, hi].
  int integer(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(eng_);
  }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
};

// Flat key = value text file; '#' starts a comment.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig load(const std::string& path);
  static KeyValueConfig parse(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Worker cap from SOCIALTRAJ_THREADS (defaults to hardware concurrency).
int worker_threads();

// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Each index must
// write only its own output slot; results are then independent of scheduling.
void parallel_for(int n, const std::function<void(int)>& fn);

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 1469598103934665603ULL);

bool all_finite(const Mat& m);

}  // namespace socialtraj
