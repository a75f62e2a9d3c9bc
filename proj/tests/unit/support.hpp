#pragma once

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "tesu/error.hpp"

// Asserts that expr throws tesu::Error of the given kind.
#define CHECK_KIND(expr, expected_kind)                                  \
  do {                                                                   \
    bool tesu_thrown_ = false;                                           \
    try {                                                                \
      (void)(expr);                                                      \
    } catch (const tesu::Error& e) {                                     \
      tesu_thrown_ = true;                                               \
      CHECK_MESSAGE(e.kind() == (expected_kind), std::string(e.what()));              \
    }                                                                    \
    CHECK_MESSAGE(tesu_thrown_, "expected tesu::Error from " #expr);     \
  } while (0)

namespace testing {

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("tesu_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
