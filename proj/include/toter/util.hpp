#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "toter/error.hpp"

namespace toter {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Random numbers. The standard distributions are implementation-defined, so
// every draw goes through the raw 64-bit engine output to keep seeded runs
// identical across standard libraries.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling removes modulo bias.
  std::size_t below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
  }

  /// Standard normal via Box-Muller (one value per call, the pair's sine half is cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// ceil() that ignores representation noise, so ceil(0.3 * 100) is 30.
inline std::size_t ceil_count(double x) {
  if (x <= 0.0) return 0;
  return static_cast<std::size_t>(std::ceil(x - 1e-9));
}

// ---------------------------------------------------------------------------
// Structured logging: one JSON record per line.

class Log {
 public:
  static void set_stream(std::ostream* os) { instance().os_ = os; }

  static void event(std::string_view stage, std::string_view message, ordered_json fields = {}) {
    auto& self = instance();
    if (self.os_ == nullptr) return;
    ordered_json rec;
    rec["stage"] = stage;
    rec["msg"] = message;
    if (fields.is_object()) {
      for (auto& [k, v] : fields.items()) rec[k] = v;
    }
    std::lock_guard lock(self.mu_);
    (*self.os_) << rec.dump() << '\n';
  }

  static void warn(std::string_view stage, std::string_view message, ordered_json fields = {}) {
    if (!fields.is_object()) fields = ordered_json::object();
    fields["level"] = "warn";
    event(stage, message, std::move(fields));
  }

 private:
  static Log& instance() {
    static Log log;
    return log;
  }
  std::ostream* os_ = &std::cerr;
  std::mutex mu_;
};

/// Scoped stage timer that logs elapsed milliseconds on destruction.
class StageTimer {
 public:
  explicit StageTimer(std::string stage) : stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    Log::event(stage_, "done", {{"elapsed_ms", ms}});
  }
  StageTimer(const StageTimer&) = delete;
  StageTimer& operator=(const StageTimer&) = delete;

 private:
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Text helpers.

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

/// Round-trippable decimal rendering for floating scores in text outputs.
inline std::string format_double(double v, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline double parse_double(std::string_view s, const std::string& where) {
  std::string tmp(trim(s));
  if (tmp.empty()) throw InputError(where + ": expected a number");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size() || errno == ERANGE) {
    throw InputError(where + ": malformed number '" + tmp + "'");
  }
  return v;
}

inline long long parse_int(std::string_view s, const std::string& where) {
  std::string tmp(trim(s));
  if (tmp.empty()) throw InputError(where + ": expected an integer");
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(tmp.c_str(), &end, 10);
  if (end != tmp.c_str() + tmp.size() || errno == ERANGE) {
    throw InputError(where + ": malformed integer '" + tmp + "'");
  }
  return v;
}

inline std::ifstream open_input(const std::string& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw InputError("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_output(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? (std::ios::binary | std::ios::trunc) : std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write '" + path + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Little-endian binary framing.

namespace binio {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw InputError(what + ": unexpected end of file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& is, std::string_view magic, const std::string& what) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw InputError(what + ": bad magic, expected " + std::string(magic));
  }
}

inline void write_id(std::ostream& os, std::string_view id) {
  if (id.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw InputError("id too long for binary framing: " + std::string(id.substr(0, 32)));
  }
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(id.size()));
  os.write(id.data(), static_cast<std::streamsize>(id.size()));
}

inline std::string read_id(std::istream& is, const std::string& what) {
  const auto len = read_le<std::uint16_t>(is, what);
  std::string id(len, '\0');
  if (len > 0 && !is.read(id.data(), len)) throw InputError(what + ": truncated id");
  return id;
}

}  // namespace binio

// ---------------------------------------------------------------------------
// Worker pool helper. Each index is processed exactly once; callers write to
// disjoint slots, so results do not depend on the worker count.

inline std::size_t default_workers() {
  if (const char* env = std::getenv("TOTER_WORKERS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace toter
