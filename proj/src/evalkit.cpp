#include "forested/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "forested/rng.hpp"
#include "forested/values.hpp"

namespace forested {

Metrics metrics(const ErrorMatrix& pred, const ErrorMatrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw ShapeError("prediction is " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     ", truth is " + std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()));
  }
  Metrics m;
  const auto& p = pred.data();
  const auto& t = truth.data();
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] && t[c]) ++m.tp;
    else if (p[c]) ++m.fp;
    else if (t[c]) ++m.fn;
    else ++m.tn;
  }
  m.precision = m.tp + m.fp ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
  m.recall = m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

nlohmann::ordered_json metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["fn"] = m.fn;
  j["tn"] = m.tn;
  return j;
}

std::string to_string(ErrorType t) {
  switch (t) {
    case ErrorType::missing_value: return "missing_value";
    case ErrorType::typo: return "typo";
    case ErrorType::pattern_violation: return "pattern_violation";
    case ErrorType::outlier: return "outlier";
    case ErrorType::rule_violation: return "rule_violation";
  }
  return "typo";
}

namespace {

constexpr ErrorType kTypes[] = {ErrorType::missing_value, ErrorType::typo, ErrorType::pattern_violation,
                                ErrorType::outlier, ErrorType::rule_violation};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

char substitute(char c, Rng& rng) {
  auto pick = [&](char lo, int n) {
    char r;
    do {
      r = static_cast<char>(lo + static_cast<int>(rng.index(static_cast<std::size_t>(n))));
    } while (r == c);
    return r;
  };
  if (c >= 'a' && c <= 'z') return pick('a', 26);
  if (c >= 'A' && c <= 'Z') return pick('A', 26);
  if (c >= '0' && c <= '9') return pick('0', 10);
  return c == 'x' ? 'y' : 'x';
}

bool is_ascii(char c) { return static_cast<unsigned char>(c) < 0x80; }

std::string reformat(const std::string& v) {
  if (looks_like_date(v)) {
    if (v.size() == 10 && v[4] == '-' && v[7] == '-') {
      return v.substr(8, 2) + "/" + v.substr(5, 2) + "/" + v.substr(0, 4);
    }
    const auto parts = split(v, '/');
    if (parts.size() == 3) {
      auto pad = [](const std::string& s) { return s.size() == 1 ? "0" + s : s; };
      return parts[2] + "-" + pad(parts[1]) + "-" + pad(parts[0]);
    }
  }
  if (parse_decimal(v)) {
    const auto dot = v.find('.');
    if (dot != std::string::npos) return v.substr(0, dot) + "," + v.substr(dot + 1);
    std::string digits = v;
    std::string sign;
    if (!digits.empty() && (digits[0] == '-' || digits[0] == '+')) {
      sign = digits.substr(0, 1);
      digits = digits.substr(1);
    }
    if (digits.size() >= 4 && std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      std::string out;
      for (std::size_t k = 0; k < digits.size(); ++k) {
        if (k && (digits.size() - k) % 3 == 0) out.push_back(',');
        out.push_back(digits[k]);
      }
      return sign + out;
    }
    return v + ".00";
  }
  const bool has_lower = std::any_of(v.begin(), v.end(), [](char c) { return c >= 'a' && c <= 'z'; });
  const bool has_upper = std::any_of(v.begin(), v.end(), [](char c) { return c >= 'A' && c <= 'Z'; });
  if (has_lower || has_upper) {
    std::string out = v;
    for (auto& c : out) {
      if (has_lower && c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
      else if (!has_lower && c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
  }
  std::string stripped;
  for (char c : v) {
    if (!is_ascii(c) || std::isalnum(static_cast<unsigned char>(c))) stripped.push_back(c);
  }
  if (stripped != v && !stripped.empty()) return stripped;
  return v.substr(0, v.size() / 2) + "-" + v.substr(v.size() / 2);
}

struct NumericRange {
  double lo = 0.0;
  double hi = 0.0;
  bool integral = true;
  bool any = false;
};

NumericRange column_range(const Table& t, std::size_t j) {
  NumericRange r;
  for (std::size_t i = 0; i < t.n_rows(); ++i) {
    const auto v = parse_decimal(t.cell(i, j));
    if (!v) continue;
    if (!r.any) {
      r.lo = r.hi = *v;
      r.any = true;
    }
    r.lo = std::min(r.lo, *v);
    r.hi = std::max(r.hi, *v);
    if (std::floor(*v) != *v || t.cell(i, j).find('.') != std::string::npos) r.integral = false;
  }
  return r;
}

std::string outlier_value(const NumericRange& r, Rng& rng) {
  double span = r.hi - r.lo;
  if (span <= 0) span = std::max(1.0, std::abs(r.hi));
  const double factor = rng.uniform(2.0, 10.0);
  double v = rng.bernoulli(0.5) ? r.hi + span * factor : r.lo - span * factor;
  if (r.integral) v = v > r.hi ? std::ceil(v) : std::floor(v);
  return format_number(v);
}

std::string fd_key(const Table& t, std::size_t i, const std::vector<std::size_t>& lhs) {
  std::string k;
  for (auto j : lhs) {
    k += t.cell(i, j);
    k.push_back('\x1f');
  }
  return k;
}

}  // namespace

FunctionalDependency parse_fd(const std::string& text) {
  const auto arrow = text.find("->");
  if (arrow == std::string::npos) throw SpecError("functional dependency needs '->': " + text);
  FunctionalDependency fd;
  for (auto& a : split(text.substr(0, arrow), ',')) {
    if (!a.empty()) fd.lhs.push_back(a);
  }
  fd.rhs = trim(text.substr(arrow + 2));
  if (fd.lhs.empty() || fd.rhs.empty()) throw SpecError("functional dependency needs both sides: " + text);
  return fd;
}

std::string to_string(const FunctionalDependency& fd) {
  std::string s;
  for (std::size_t k = 0; k < fd.lhs.size(); ++k) {
    if (k) s += ",";
    s += fd.lhs[k];
  }
  return s + "->" + fd.rhs;
}

double InjectionSpec::rate(ErrorType t) const {
  switch (t) {
    case ErrorType::missing_value: return missing_value;
    case ErrorType::typo: return typo;
    case ErrorType::pattern_violation: return pattern_violation;
    case ErrorType::outlier: return outlier;
    case ErrorType::rule_violation: return rule_violation;
  }
  return 0.0;
}

InjectionSpec uniform_spec(double total_rate, std::vector<FunctionalDependency> fds, std::uint64_t seed) {
  InjectionSpec s;
  const double share = total_rate / (fds.empty() ? 4.0 : 5.0);
  s.missing_value = s.typo = s.pattern_violation = s.outlier = share;
  if (!fds.empty()) s.rule_violation = share;
  s.fds = std::move(fds);
  s.seed = seed;
  return s;
}

std::vector<std::size_t> injection_counts(const InjectionSpec& spec, std::size_t cells) {
  std::vector<std::size_t> counts(5, 0);
  const double total_rate = spec.total();
  if (total_rate <= 0) return counts;
  const auto total = static_cast<std::size_t>(std::llround(total_rate * static_cast<double>(cells)));
  std::vector<double> frac(5);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    const double quota = spec.rate(kTypes[k]) / total_rate * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    frac[k] = quota - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::vector<std::size_t> order = {0, 1, 2, 3, 4};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < total; ++k) {
    const auto t = order[k % 5];
    if (spec.rate(kTypes[t]) <= 0) continue;
    ++counts[t];
    ++assigned;
  }
  return counts;
}

std::string typo_edit(const std::string& value, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> swappable;
  for (std::size_t k = 0; k + 1 < value.size(); ++k) {
    if (is_ascii(value[k]) && is_ascii(value[k + 1]) && value[k] != value[k + 1]) swappable.push_back(k);
  }
  std::vector<std::size_t> ascii;
  for (std::size_t k = 0; k < value.size(); ++k) {
    if (is_ascii(value[k])) ascii.push_back(k);
  }
  std::string out = value;
  if (!swappable.empty() && rng.bernoulli(0.25)) {
    const auto k = swappable[rng.index(swappable.size())];
    std::swap(out[k], out[k + 1]);
  } else if (!ascii.empty()) {
    const auto k = ascii[rng.index(ascii.size())];
    out[k] = substitute(out[k], rng);
  } else {
    out.push_back('x');
  }
  return out;
}

InjectionResult inject_errors(const Table& clean, const InjectionSpec& spec) {
  for (auto t : kTypes) {
    const double r = spec.rate(t);
    if (!(r >= 0.0 && r <= 1.0)) throw SpecError(to_string(t) + " rate must lie in [0, 1]");
  }
  if (spec.total() > 1.0 + 1e-12) throw SpecError("error rates sum to more than 1");
  if (spec.rule_violation > 0 && spec.fds.empty()) throw SpecError("rule_violation requested without a functional dependency");

  struct ResolvedFd {
    std::vector<std::size_t> lhs;
    std::size_t rhs;
  };
  std::vector<ResolvedFd> fds;
  for (const auto& fd : spec.fds) {
    ResolvedFd r;
    for (const auto& a : fd.lhs) {
      const auto j = clean.attribute_index(a);
      if (j >= clean.n_cols()) throw SpecError("unknown FD attribute " + a);
      r.lhs.push_back(j);
    }
    r.rhs = clean.attribute_index(fd.rhs);
    if (r.rhs >= clean.n_cols()) throw SpecError("unknown FD attribute " + fd.rhs);
    fds.push_back(std::move(r));
  }

  const std::size_t n = clean.n_rows();
  const std::size_t m = clean.n_cols();
  const auto counts = injection_counts(spec, n * m);

  std::vector<NumericRange> ranges(m);
  for (std::size_t j = 0; j < m; ++j) ranges[j] = column_range(clean, j);

  // For each FD: rhs value -> LHS keys it appears under.
  std::vector<std::map<std::string, std::set<std::string>>> fd_values(fds.size());
  for (std::size_t f = 0; f < fds.size(); ++f) {
    for (std::size_t i = 0; i < n; ++i) fd_values[f][clean.cell(i, fds[f].rhs)].insert(fd_key(clean, i, fds[f].lhs));
  }
  auto rv_candidates = [&](std::size_t f, std::size_t i) {
    std::vector<std::string> out;
    const auto key = fd_key(clean, i, fds[f].lhs);
    const auto& cur = clean.cell(i, fds[f].rhs);
    for (const auto& [v, keys] : fd_values[f]) {
      if (v == cur || v.empty()) continue;
      if (keys.size() > 1 || *keys.begin() != key) out.push_back(v);
    }
    return out;
  };

  auto rows = clean.rows();
  std::vector<bool> used(n * m, false);
  std::vector<std::string> names;
  for (const auto& a : clean.attributes()) names.push_back(a.name);
  InjectionResult res{Table(), ErrorMatrix(n, m, MatrixKind::ground_truth, names), {}};

  for (std::size_t k = 0; k < 5; ++k) {
    if (counts[k] == 0) continue;
    const ErrorType type = kTypes[k];
    Rng rng(derive_seed(spec.seed, k));
    std::vector<std::pair<std::size_t, std::size_t>> eligible;  // (cell, fd index)
    for (std::size_t c = 0; c < n * m; ++c) {
      if (used[c]) continue;
      const std::size_t i = c / m;
      const std::size_t j = c % m;
      const auto& v = clean.cell(i, j);
      switch (type) {
        case ErrorType::missing_value:
        case ErrorType::typo:
        case ErrorType::pattern_violation:
          if (!v.empty()) eligible.push_back({c, 0});
          break;
        case ErrorType::outlier:
          if (parse_decimal(v)) eligible.push_back({c, 0});
          break;
        case ErrorType::rule_violation:
          for (std::size_t f = 0; f < fds.size(); ++f) {
            if (fds[f].rhs == j && !rv_candidates(f, i).empty()) {
              eligible.push_back({c, f});
              break;
            }
          }
          break;
      }
    }
    if (eligible.size() < counts[k]) {
      throw SpecError(to_string(type) + ": " + std::to_string(counts[k]) + " cells requested but only " +
                      std::to_string(eligible.size()) + " are eligible");
    }
    rng.shuffle(eligible);
    eligible.resize(counts[k]);
    std::sort(eligible.begin(), eligible.end());
    for (const auto& [c, f] : eligible) {
      const std::size_t i = c / m;
      const std::size_t j = c % m;
      const std::string before = clean.cell(i, j);
      std::string after;
      switch (type) {
        case ErrorType::missing_value: after = ""; break;
        case ErrorType::typo: after = typo_edit(before, rng.next()); break;
        case ErrorType::pattern_violation: after = reformat(before); break;
        case ErrorType::outlier: after = outlier_value(ranges[j], rng); break;
        case ErrorType::rule_violation: {
          const auto cands = rv_candidates(f, i);
          after = cands[rng.index(cands.size())];
          break;
        }
      }
      if (after == before) throw std::logic_error("injection left a cell unchanged");
      used[c] = true;
      rows[i][j] = after;
      res.truth.set(i, j, true);
      res.log.push_back({i, j, type, before, after});
    }
  }
  std::sort(res.log.begin(), res.log.end(), [](const InjectionRecord& a, const InjectionRecord& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  res.dirty = Table(names, std::move(rows));
  return res;
}

std::string injection_log_to_csv(const std::vector<InjectionRecord>& log) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : log) {
    rows.push_back({std::to_string(r.row), std::to_string(r.col), to_string(r.type), r.before, r.after});
  }
  return to_csv(Table({"row_index", "column_index", "error_type", "clean_value", "dirty_value"}, std::move(rows)));
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("pearson needs equally long inputs");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx <= 1e-300 || syy <= 1e-300) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

ReliabilityReport reliability_report(const ConsensusState& state, const std::vector<Metrics>& per_tree) {
  if (state.theta.size() != per_tree.size()) throw ShapeError("one Metrics entry per tree is required");
  if (per_tree.size() < 3) throw std::invalid_argument("a reliability report needs at least three trees");
  ReliabilityReport rep;
  std::vector<double> x, y;
  for (std::size_t r = 0; r < per_tree.size(); ++r) {
    rep.rows.push_back({r, state.reliability(r), per_tree[r].f1});
    x.push_back(state.reliability(r));
    y.push_back(per_tree[r].f1);
  }
  rep.pearson_r = pearson(x, y);
  return rep;
}

std::string ReliabilityReport::to_csv() const {
  std::string out = "tree,reliability,f1\n";
  for (const auto& r : rows) {
    out += std::to_string(r.tree) + "," + format_number(r.reliability) + "," + format_number(r.f1) + "\n";
  }
  return out;
}

nlohmann::ordered_json ReliabilityReport::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) arr.push_back({{"tree", r.tree}, {"reliability", r.reliability}, {"f1", r.f1}});
  j["trees"] = std::move(arr);
  if (pearson_r) {
    j["pearson_r"] = *pearson_r;
  } else {
    j["pearson_r"] = nullptr;
    j["note"] = "zero variance: correlation undefined";
  }
  return j;
}

ErrorMatrix simulate_annotator(const ErrorMatrix& truth, double accuracy, std::uint64_t seed) {
  Rng rng(seed);
  ErrorMatrix out(truth.rows(), truth.cols(), MatrixKind::tree_prediction, truth.column_names());
  for (std::size_t i = 0; i < truth.rows(); ++i) {
    for (std::size_t j = 0; j < truth.cols(); ++j) {
      const bool flip = rng.uniform() >= accuracy;
      out.set(i, j, (truth.at(i, j) != 0) != flip);
    }
  }
  return out;
}

}  // namespace forested
