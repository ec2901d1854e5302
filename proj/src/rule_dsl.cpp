#include "forested/rule_dsl.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <regex>
#include <variant>
#include <vector>

#include "forested/values.hpp"

namespace forested {

std::string_view rule_dsl_grammar() {
  return R"(Rule expressions (one boolean expression, true = the cell is erroneous):
  literals : numbers (3, -1.5), strings ("abc" or 'abc'), true, false, sets {"a", "b"}
  names    : value (the cell text), attr (the attribute name), row (0-based row index)
  operators: or, and, not (also ||, &&, !); == != < <= > >=; + - * / %
  functions:
    is_null(v)            cell is empty
    len(v)                number of characters
    matches(v, "regex")   ECMAScript regex search; anchor with ^...$ for a full match
    to_number(v)          numeric value, an error if v is not a number
    is_number(v), is_date(v)
    in_set(v, {"a","b"})  membership in a literal set
    field("Attr")         text of another attribute in the same row
    lower(v), upper(v), trim(v), abs(x)
    contains(v, "s"), starts_with(v, "s"), ends_with(v, "s")
    violates(cond)        true when cond is false OR cannot be evaluated
Comparing a string with a number converts the string with to_number.
Examples:
  is_null(value)
  attr == "age" and violates(to_number(value) >= 0 and to_number(value) <= 120)
  attr == "date" and not matches(value, "^\d{4}-\d{2}-\d{2}$")
  attr == "state" and not in_set(value, {"AL", "AK", "AZ"})
  attr == "city" and value != lower(value))";
}

namespace {

struct StringSet {
  std::vector<std::string> items;
};

using Value = std::variant<bool, double, std::string, StringSet>;

enum class Op {
  literal, value, attr, row, set, call,
  logical_or, logical_and, logical_not,
  eq, ne, lt, le, gt, ge,
  add, sub, mul, div, mod, neg
};

}  // namespace

struct RuleNodeAst {
  Op op = Op::literal;
  Value literal = false;
  std::string function;
  std::vector<std::shared_ptr<const RuleNodeAst>> args;
  std::shared_ptr<const std::regex> regex;
};

namespace {

using NodePtr = std::shared_ptr<const RuleNodeAst>;

enum class Tok { ident, number, string, lparen, rparen, lbrace, rbrace, comma, op, end };

struct Token {
  Tok kind;
  std::string text;
  double number = 0.0;
  std::size_t offset = 0;
};

std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
      out.push_back({Tok::ident, std::string(src.substr(start, i - start)), 0.0, start});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      while (i < src.size() && (std::isdigit(static_cast<unsigned char>(src[i])) || src[i] == '.')) ++i;
      if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
        std::size_t k = i + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
          i = k;
          while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
        }
      }
      auto text = src.substr(start, i - start);
      auto num = parse_decimal(text);
      if (!num) throw RuleParseError("malformed number '" + std::string(text) + "'", start);
      out.push_back({Tok::number, std::string(text), *num, start});
      continue;
    }
    if (c == '"' || c == '\'') {
      std::string s;
      ++i;
      bool closed = false;
      while (i < src.size()) {
        char d = src[i];
        if (d == '\\' && i + 1 < src.size()) {
          char e = src[i + 1];
          if (e == c || e == '\\') {
            s.push_back(e);
          } else {
            // Unknown escapes stay verbatim so regex classes like \d survive.
            s.push_back('\\');
            s.push_back(e);
          }
          i += 2;
          continue;
        }
        if (d == c) {
          closed = true;
          ++i;
          break;
        }
        s.push_back(d);
        ++i;
      }
      if (!closed) throw RuleParseError("unterminated string literal", start);
      out.push_back({Tok::string, std::move(s), 0.0, start});
      continue;
    }
    switch (c) {
      case '(': out.push_back({Tok::lparen, "(", 0.0, start}); ++i; continue;
      case ')': out.push_back({Tok::rparen, ")", 0.0, start}); ++i; continue;
      case '{': out.push_back({Tok::lbrace, "{", 0.0, start}); ++i; continue;
      case '}': out.push_back({Tok::rbrace, "}", 0.0, start}); ++i; continue;
      case ',': out.push_back({Tok::comma, ",", 0.0, start}); ++i; continue;
      default: break;
    }
    static const char* kTwoChar[] = {"==", "!=", "<=", ">=", "&&", "||"};
    bool matched = false;
    for (const char* op : kTwoChar) {
      if (src.substr(i, 2) == op) {
        out.push_back({Tok::op, op, 0.0, start});
        i += 2;
        matched = true;
        break;
      }
    }
    if (matched) continue;
    if (std::string_view("<>+-*/%!").find(c) != std::string_view::npos) {
      out.push_back({Tok::op, std::string(1, c), 0.0, start});
      ++i;
      continue;
    }
    throw RuleParseError(std::string("unexpected character '") + c + "'", start);
  }
  out.push_back({Tok::end, "", 0.0, src.size()});
  return out;
}

struct FunctionSig {
  std::size_t arity;
};

const std::map<std::string, FunctionSig>& functions() {
  static const std::map<std::string, FunctionSig> table = {
      {"is_null", {1}},  {"len", {1}},         {"matches", {2}},   {"to_number", {1}},
      {"is_number", {1}}, {"is_date", {1}},    {"in_set", {2}},    {"field", {1}},
      {"lower", {1}},    {"upper", {1}},       {"trim", {1}},      {"contains", {2}},
      {"starts_with", {2}}, {"ends_with", {2}}, {"abs", {1}},      {"violates", {1}},
  };
  return table;
}

class Parser {
 public:
  Parser(std::vector<Token> tokens, std::set<std::string>& fields)
      : toks_(std::move(tokens)), fields_(fields) {}

  NodePtr parse_all() {
    NodePtr e = parse_or();
    if (peek().kind != Tok::end) fail("unexpected '" + peek().text + "'");
    return e;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  Token take() { return toks_[pos_++]; }
  [[noreturn]] void fail(const std::string& msg) const { throw RuleParseError(msg, peek().offset); }

  bool accept_op(std::initializer_list<const char*> ops, std::string* which = nullptr) {
    const Token& t = peek();
    if (t.kind != Tok::op && t.kind != Tok::ident) return false;
    for (const char* op : ops) {
      if (t.text == op) {
        if (which) *which = t.text;
        ++pos_;
        return true;
      }
    }
    return false;
  }

  void expect(Tok kind, const char* what) {
    if (peek().kind != kind) fail(std::string("expected ") + what);
    ++pos_;
  }

  static NodePtr make(Op op, std::vector<NodePtr> args = {}) {
    auto n = std::make_shared<RuleNodeAst>();
    n->op = op;
    n->args = std::move(args);
    return n;
  }

  NodePtr parse_or() {
    NodePtr lhs = parse_and();
    while (accept_op({"or", "||"})) lhs = make(Op::logical_or, {lhs, parse_and()});
    return lhs;
  }
  NodePtr parse_and() {
    NodePtr lhs = parse_not();
    while (accept_op({"and", "&&"})) lhs = make(Op::logical_and, {lhs, parse_not()});
    return lhs;
  }
  NodePtr parse_not() {
    if (accept_op({"not", "!"})) return make(Op::logical_not, {parse_not()});
    return parse_cmp();
  }
  NodePtr parse_cmp() {
    NodePtr lhs = parse_sum();
    std::string op;
    if (accept_op({"==", "!=", "<=", ">=", "<", ">"}, &op)) {
      static const std::map<std::string, Op> kOps = {{"==", Op::eq}, {"!=", Op::ne}, {"<", Op::lt},
                                                     {"<=", Op::le}, {">", Op::gt},  {">=", Op::ge}};
      return make(kOps.at(op), {lhs, parse_sum()});
    }
    return lhs;
  }
  NodePtr parse_sum() {
    NodePtr lhs = parse_prod();
    std::string op;
    while (accept_op({"+", "-"}, &op)) lhs = make(op == "+" ? Op::add : Op::sub, {lhs, parse_prod()});
    return lhs;
  }
  NodePtr parse_prod() {
    NodePtr lhs = parse_unary();
    std::string op;
    while (accept_op({"*", "/", "%"}, &op)) {
      lhs = make(op == "*" ? Op::mul : op == "/" ? Op::div : Op::mod, {lhs, parse_unary()});
    }
    return lhs;
  }
  NodePtr parse_unary() {
    if (accept_op({"-"})) return make(Op::neg, {parse_unary()});
    return parse_primary();
  }

  NodePtr literal(Value v) {
    auto n = std::make_shared<RuleNodeAst>();
    n->op = Op::literal;
    n->literal = std::move(v);
    return n;
  }

  NodePtr parse_set() {
    StringSet set;
    if (peek().kind != Tok::rbrace) {
      do {
        if (peek().kind == Tok::string) {
          set.items.push_back(take().text);
        } else if (peek().kind == Tok::number) {
          set.items.push_back(take().text);
        } else {
          fail("set literals may only contain strings or numbers");
        }
      } while (peek().kind == Tok::comma && (++pos_, true));
    }
    expect(Tok::rbrace, "'}'");
    std::sort(set.items.begin(), set.items.end());
    auto n = std::make_shared<RuleNodeAst>();
    n->op = Op::set;
    n->literal = std::move(set);
    return n;
  }

  NodePtr parse_primary() {
    const Token t = peek();
    switch (t.kind) {
      case Tok::number: ++pos_; return literal(t.number);
      case Tok::string: ++pos_; return literal(t.text);
      case Tok::lbrace: ++pos_; return parse_set();
      case Tok::lparen: {
        ++pos_;
        NodePtr e = parse_or();
        expect(Tok::rparen, "')'");
        return e;
      }
      case Tok::ident: break;
      default: fail(t.kind == Tok::end ? "unexpected end of expression" : "unexpected '" + t.text + "'");
    }
    ++pos_;
    if (t.text == "true") return literal(true);
    if (t.text == "false") return literal(false);
    if (t.text == "value") return make(Op::value);
    if (t.text == "attr") return make(Op::attr);
    if (t.text == "row") return make(Op::row);
    auto fn = functions().find(t.text);
    if (fn == functions().end()) {
      pos_--;
      fail("unknown name '" + t.text + "'");
    }
    expect(Tok::lparen, "'(' after function name");
    std::vector<NodePtr> args;
    if (peek().kind != Tok::rparen) {
      args.push_back(parse_or());
      while (peek().kind == Tok::comma) {
        ++pos_;
        args.push_back(parse_or());
      }
    }
    expect(Tok::rparen, "')'");
    if (args.size() != fn->second.arity) {
      throw RuleParseError(t.text + " expects " + std::to_string(fn->second.arity) + " argument(s), got " +
                               std::to_string(args.size()),
                           t.offset);
    }
    auto n = std::make_shared<RuleNodeAst>();
    n->op = Op::call;
    n->function = t.text;
    n->args = args;
    auto string_literal_arg = [&](std::size_t k) -> const std::string& {
      const auto& a = *args[k];
      if (a.op != Op::literal || !std::holds_alternative<std::string>(a.literal)) {
        throw RuleParseError(t.text + " argument " + std::to_string(k + 1) + " must be a string literal", t.offset);
      }
      return std::get<std::string>(a.literal);
    };
    if (t.text == "matches") {
      const auto& pattern = string_literal_arg(1);
      try {
        n->regex = std::make_shared<const std::regex>(pattern, std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw RuleParseError("invalid regex \"" + pattern + "\": " + e.what(), t.offset);
      }
    } else if (t.text == "field") {
      fields_.insert(string_literal_arg(0));
    } else if (t.text == "in_set") {
      if (args[1]->op != Op::set) throw RuleParseError("in_set expects a {...} set literal", t.offset);
    } else if (t.text == "contains" || t.text == "starts_with" || t.text == "ends_with") {
      string_literal_arg(1);
    }
    return n;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  std::set<std::string>& fields_;
};

struct Context {
  const Table& table;
  std::size_t i;
  std::size_t j;
};

const char* kind_name(const Value& v) {
  switch (v.index()) {
    case 0: return "boolean";
    case 1: return "number";
    case 2: return "string";
    default: return "set";
  }
}

Value eval(const RuleNodeAst& n, const Context& ctx);

bool as_bool(const Value& v, const char* where) {
  if (auto b = std::get_if<bool>(&v)) return *b;
  throw RuleEvalError(std::string(where) + " needs a boolean, got a " + kind_name(v));
}

double as_number(const Value& v, const char* where) {
  if (auto d = std::get_if<double>(&v)) return *d;
  if (auto s = std::get_if<std::string>(&v)) {
    if (auto x = parse_decimal(*s)) return *x;
    throw RuleEvalError(std::string(where) + ": \"" + *s + "\" is not a number");
  }
  throw RuleEvalError(std::string(where) + " needs a number, got a " + kind_name(v));
}

const std::string& as_string(const Value& v, const char* where) {
  if (auto s = std::get_if<std::string>(&v)) return *s;
  throw RuleEvalError(std::string(where) + " needs a string, got a " + kind_name(v));
}

int compare(const Value& a, const Value& b) {
  if (std::holds_alternative<std::string>(a) && std::holds_alternative<std::string>(b)) {
    const auto& x = std::get<std::string>(a);
    const auto& y = std::get<std::string>(b);
    return x < y ? -1 : (x == y ? 0 : 1);
  }
  if (std::holds_alternative<bool>(a) || std::holds_alternative<bool>(b)) {
    const bool x = as_bool(a, "comparison");
    const bool y = as_bool(b, "comparison");
    return static_cast<int>(x) - static_cast<int>(y);
  }
  const double x = as_number(a, "comparison");
  const double y = as_number(b, "comparison");
  return x < y ? -1 : (x == y ? 0 : 1);
}

std::string map_chars(std::string s, int (*f)(int)) {
  for (auto& c : s) c = static_cast<char>(f(static_cast<unsigned char>(c)));
  return s;
}

Value call(const RuleNodeAst& n, const Context& ctx) {
  const std::string& f = n.function;
  if (f == "violates") {
    try {
      return !as_bool(eval(*n.args[0], ctx), "violates");
    } catch (const RuleEvalError&) {
      return true;
    }
  }
  if (f == "field") {
    const auto& name = std::get<std::string>(n.args[0]->literal);
    const std::size_t k = ctx.table.attribute_index(name);
    if (k >= ctx.table.n_cols()) throw RuleEvalError("unknown attribute \"" + name + "\"");
    return ctx.table.cell(ctx.i, k);
  }
  const Value a = eval(*n.args[0], ctx);
  if (f == "is_null") return as_string(a, "is_null").empty();
  if (f == "len") return static_cast<double>(as_string(a, "len").size());
  if (f == "to_number") return as_number(a, "to_number");
  if (f == "is_number") {
    if (std::holds_alternative<double>(a)) return true;
    return parse_decimal(as_string(a, "is_number")).has_value();
  }
  if (f == "is_date") return looks_like_date(as_string(a, "is_date"));
  if (f == "matches") return std::regex_search(as_string(a, "matches"), *n.regex);
  if (f == "lower") return map_chars(as_string(a, "lower"), ::tolower);
  if (f == "upper") return map_chars(as_string(a, "upper"), ::toupper);
  if (f == "trim") {
    const auto& s = as_string(a, "trim");
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  }
  if (f == "abs") return std::fabs(as_number(a, "abs"));
  if (f == "in_set") {
    const auto& items = std::get<StringSet>(n.args[1]->literal).items;
    std::string key = std::holds_alternative<double>(a) ? format_number(std::get<double>(a))
                                                        : as_string(a, "in_set");
    return std::binary_search(items.begin(), items.end(), key);
  }
  const auto& s = as_string(a, f.c_str());
  const auto& needle = std::get<std::string>(n.args[1]->literal);
  if (f == "contains") return s.find(needle) != std::string::npos;
  if (f == "starts_with") return s.rfind(needle, 0) == 0;
  if (f == "ends_with") return s.size() >= needle.size() && s.compare(s.size() - needle.size(), needle.size(), needle) == 0;
  throw RuleEvalError("unknown function " + f);
}

Value eval(const RuleNodeAst& n, const Context& ctx) {
  switch (n.op) {
    case Op::literal:
    case Op::set: return n.literal;
    case Op::value: return ctx.table.cell(ctx.i, ctx.j);
    case Op::attr: return ctx.table.attribute_name(ctx.j);
    case Op::row: return static_cast<double>(ctx.i);
    case Op::call: return call(n, ctx);
    case Op::logical_or:
      return as_bool(eval(*n.args[0], ctx), "or") || as_bool(eval(*n.args[1], ctx), "or");
    case Op::logical_and:
      return as_bool(eval(*n.args[0], ctx), "and") && as_bool(eval(*n.args[1], ctx), "and");
    case Op::logical_not: return !as_bool(eval(*n.args[0], ctx), "not");
    case Op::eq: return compare(eval(*n.args[0], ctx), eval(*n.args[1], ctx)) == 0;
    case Op::ne: return compare(eval(*n.args[0], ctx), eval(*n.args[1], ctx)) != 0;
    case Op::lt: return compare(eval(*n.args[0], ctx), eval(*n.args[1], ctx)) < 0;
    case Op::le: return compare(eval(*n.args[0], ctx), eval(*n.args[1], ctx)) <= 0;
    case Op::gt: return compare(eval(*n.args[0], ctx), eval(*n.args[1], ctx)) > 0;
    case Op::ge: return compare(eval(*n.args[0], ctx), eval(*n.args[1], ctx)) >= 0;
    case Op::neg: return -as_number(eval(*n.args[0], ctx), "negation");
    default: break;
  }
  const double x = as_number(eval(*n.args[0], ctx), "arithmetic");
  const double y = as_number(eval(*n.args[1], ctx), "arithmetic");
  switch (n.op) {
    case Op::add: return x + y;
    case Op::sub: return x - y;
    case Op::mul: return x * y;
    case Op::div:
      if (y == 0.0) throw RuleEvalError("division by zero");
      return x / y;
    case Op::mod:
      if (y == 0.0) throw RuleEvalError("modulo by zero");
      return std::fmod(x, y);
    default: throw RuleEvalError("bad operator");
  }
}

}  // namespace

RuleExpr RuleExpr::parse(std::string_view source) {
  RuleExpr e;
  e.source_ = std::string(source);
  Parser parser(lex(source), e.fields_);
  e.root_ = parser.parse_all();
  return e;
}

bool RuleExpr::evaluate(const Table& t, std::size_t i, std::size_t j) const {
  const Value v = eval(*root_, Context{t, i, j});
  if (auto b = std::get_if<bool>(&v)) return *b;
  throw RuleEvalError(std::string("rule produced a ") + kind_name(v) + ", expected a boolean");
}

}  // namespace forested
