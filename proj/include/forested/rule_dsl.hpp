#pragma once

#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

#include "forested/table.hpp"

namespace forested {

/// Rule expressions are a closed, side-effect free language evaluated once per cell.
///
///   expr    := or
///   or      := and  (("or" | "||") and)*
///   and     := not  (("and" | "&&") not)*
///   not     := ("not" | "!") not | cmp
///   cmp     := sum (("==" | "!=" | "<" | "<=" | ">" | ">=") sum)?
///   sum     := prod (("+" | "-") prod)*
///   prod    := unary (("*" | "/" | "%") unary)*
///   unary   := "-" unary | primary
///   primary := NUMBER | STRING | "true" | "false" | "value" | "attr" | "row"
///            | "{" STRING ("," STRING)* "}" | IDENT "(" args ")" | "(" expr ")"
///
/// `value` is the cell text, `attr` the attribute name, `row` the 0-based row index.
/// Functions: is_null, len, matches(v, "regex"), to_number, is_number, is_date, in_set(v, {...}),
/// field("Attr"), lower, upper, trim, contains, starts_with, ends_with, abs, violates(cond).
/// `violates(cond)` is `not cond`, except that an evaluation error inside `cond` yields true.
std::string_view rule_dsl_grammar();

class RuleParseError : public std::runtime_error {
 public:
  RuleParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class RuleEvalError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RuleNodeAst;

class RuleExpr {
 public:
  /// Throws RuleParseError on syntax errors, unknown names, wrong arity or invalid regexes.
  static RuleExpr parse(std::string_view source);

  /// True when the cell is flagged. Throws RuleEvalError on coercion or type failures.
  bool evaluate(const Table& t, std::size_t i, std::size_t j) const;

  const std::string& source() const { return source_; }
  /// Attribute names read through field("...").
  const std::set<std::string>& referenced_fields() const { return fields_; }

 private:
  std::string source_;
  std::shared_ptr<const RuleNodeAst> root_;
  std::set<std::string> fields_;
};

}  // namespace forested
