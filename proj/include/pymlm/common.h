// Copyright 2026 The pinyin-mlm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PYMLM_COMMON_H_
#define PYMLM_COMMON_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pymlm {

// Error hierarchy. Every module reports failures by throwing one of these.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class DuplicateEntryError : public Error {
 public:
  using Error::Error;
};

class DecompositionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Label sentinel for positions that carry no supervision.
inline constexpr int32_t kIgnore = -100;

// Deterministic random stream. The engine output sequence is fixed by the
// standard, and the derived draws below avoid the implementation-defined
// distributions of <random>, so a seed reproduces bit-identical results on
// any conforming toolchain.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller (one value per call).
  double normal();

  // Draws from N(0, stddev^2) rejecting values beyond two stddevs.
  double truncated_normal(double stddev);

 private:
  std::mt19937_64 engine_;
};

// splitmix64 finalizer; used to derive independent stream seeds.
uint64_t mix64(uint64_t x);

// Seed for a sub-stream identified by a list of integers, e.g.
// (seed, epoch, instance index).
uint64_t derive_seed(uint64_t seed, std::initializer_list<uint64_t> parts);

// Rounds half away from zero for non-negative inputs (round-half-up).
int64_t round_half_up(double x);

// UTF-8 helpers. Decoding is lenient: invalid bytes decode to U+FFFD so
// callers see a total function over arbitrary input.
std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);
std::string utf8_encode(char32_t ch);

// Reads all lines of a UTF-8 text file (without trailing '\n' or '\r').
std::vector<std::string> read_lines(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace pymlm

#endif  // PYMLM_COMMON_H_
