#include "forested/synthetic.hpp"

#include "forested/rng.hpp"

namespace forested {

namespace {

struct City {
  const char* name;
  const char* state;
  std::vector<const char*> zips;
};

const std::vector<City>& cities() {
  static const std::vector<City> list = {
      {"birmingham", "al", {"35203", "35205", "35233"}},
      {"huntsville", "al", {"35801", "35805", "35816"}},
      {"montgomery", "al", {"36104", "36106", "36116"}},
      {"atlanta", "ga", {"30303", "30308", "30312"}},
      {"savannah", "ga", {"31401", "31405", "31406"}},
      {"nashville", "tn", {"37203", "37205", "37211"}},
  };
  return list;
}

const std::vector<const char*>& hospital_names() {
  static const std::vector<const char*> list = {
      "st vincents medical center", "baptist medical center", "mercy hospital",  "university hospital",
      "regional medical center",    "memorial hospital",      "childrens hospital", "veterans medical center",
  };
  return list;
}

}  // namespace

Table synthetic_hospital(std::size_t n_rows, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) {
    const auto& city = cities()[rng.index(cities().size())];
    const auto zip = city.zips[rng.index(city.zips.size())];
    const auto name = hospital_names()[rng.index(hospital_names().size())];
    const auto score = 40 + rng.index(61);
    rows.push_back({std::to_string(10001 + i), name, zip, city.name, city.state, std::to_string(score)});
  }
  return Table({"provider_id", "hospital_name", "zip", "city", "state", "score"}, std::move(rows));
}

std::vector<FunctionalDependency> synthetic_fds() { return {{{"zip"}, "city"}, {{"zip"}, "state"}}; }

Table project(const Table& t, const std::vector<std::string>& columns) {
  std::vector<std::size_t> idx;
  for (const auto& c : columns) {
    const auto j = t.attribute_index(c);
    if (j >= t.n_cols()) throw SchemaError("unknown column " + c);
    idx.push_back(j);
  }
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : t.rows()) {
    std::vector<std::string> out;
    for (auto j : idx) out.push_back(r[j]);
    rows.push_back(std::move(out));
  }
  return Table(columns, std::move(rows));
}

SyntheticBenchmark fd_benchmark(std::size_t n_rows, double fd_rate, double other_rate, std::uint64_t seed) {
  SyntheticBenchmark b;
  b.clean = synthetic_hospital(n_rows, seed);
  b.fds = {{{"zip"}, "city"}};
  InjectionSpec spec;
  spec.rule_violation = fd_rate;
  spec.missing_value = spec.typo = spec.pattern_violation = spec.outlier = other_rate / 4.0;
  spec.fds = b.fds;
  spec.seed = derive_seed(seed, 77);
  auto inj = inject_errors(b.clean, spec);
  b.dirty = std::move(inj.dirty);
  b.truth = std::move(inj.truth);
  b.log = std::move(inj.log);
  return b;
}

}  // namespace forested
