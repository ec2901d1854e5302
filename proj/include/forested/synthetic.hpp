#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "forested/evalkit.hpp"
#include "forested/table.hpp"

namespace forested {

/// Hospital-style table with columns provider_id, hospital_name, zip, city, state, score.
/// zip determines city and state.
Table synthetic_hospital(std::size_t n_rows, std::uint64_t seed);

/// zip->city and zip->state.
std::vector<FunctionalDependency> synthetic_fds();

/// Keeps the named columns in the given order.
Table project(const Table& t, const std::vector<std::string>& columns);

struct SyntheticBenchmark {
  Table clean;
  Table dirty;
  ErrorMatrix truth;
  std::vector<InjectionRecord> log;
  std::vector<FunctionalDependency> fds;
};

/// Clean synthetic_hospital table with zip->city violations at `fd_rate` of all cells and the
/// four other error types sharing `other_rate`.
SyntheticBenchmark fd_benchmark(std::size_t n_rows, double fd_rate, double other_rate, std::uint64_t seed);

}  // namespace forested
