#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "forested/evalkit.hpp"
#include "forested/synthetic.hpp"

namespace fs = std::filesystem;
using namespace forested;

int main(int argc, char** argv) {
  CLI::App app{"Writes a seeded synthetic hospital table, a dirty copy and its ground truth"};
  std::size_t rows = 50;
  double rate = 0.1;
  std::uint64_t seed = 7;
  std::string out = "data";
  std::string prefix = "hospital50";
  app.add_option("--rows", rows, "Number of tuples");
  app.add_option("--rate", rate, "Total error rate");
  app.add_option("--seed", seed, "Seed");
  app.add_option("--prefix", prefix, "File name prefix");
  app.add_option("-o,--out", out, "Output directory");
  CLI11_PARSE(app, argc, argv);

  const Table clean = synthetic_hospital(rows, seed);
  const auto res = inject_errors(clean, uniform_spec(rate, synthetic_fds(), seed));
  fs::create_directories(out);
  write_table(clean, fs::path(out) / (prefix + "_clean.csv"));
  write_table(res.dirty, fs::path(out) / (prefix + "_dirty.csv"));
  write_matrix(res.truth, fs::path(out) / (prefix + "_truth.csv"));
  write_file(fs::path(out) / (prefix + "_injections.csv"), injection_log_to_csv(res.log));
  std::cout << res.log.size() << " errors in " << clean.n_rows() << "x" << clean.n_cols() << "\n";
  return 0;
}
