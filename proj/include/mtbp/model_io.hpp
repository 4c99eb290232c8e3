#pragma once

#include <charconv>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mtbp/types.hpp"

namespace mtbp {

// Model text format, line oriented:
//
//   # comment
//   nonterminals: T1 T2
//   terminals: T1t T2t
//   T1 -> T1 T1 : 0.25
//
// '#' starts a comment anywhere; tokens are whitespace separated; the two
// header lines must precede all productions; offspring multisets are written
// expanded (one token per child).

namespace detail {

struct Token {
  std::string text;
  int column = 0;  // 1-based
};

inline std::vector<Token> tokenize_line(std::string_view line) {
  std::vector<Token> out;
  size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (c == '#') break;
    if (std::isspace(static_cast<unsigned char>(c))) { ++i; continue; }
    size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])) &&
           line[i] != '#')
      ++i;
    out.push_back({std::string(line.substr(start, i - start)),
                   static_cast<int>(start) + 1});
  }
  return out;
}

[[noreturn]] inline void syntax_error(int line, int column, const std::string& what) {
  fail(ErrorKind::validation,
       "model:" + std::to_string(line) + ":" + std::to_string(column) + ": " + what);
}

inline double parse_probability(const Token& tok, int line) {
  double value = 0.0;
  const char* b = tok.text.data();
  const char* e = b + tok.text.size();
  auto [ptr, ec] = std::from_chars(b, e, value);
  if (ec != std::errc() || ptr != e)
    syntax_error(line, tok.column, "expected a probability, got '" + tok.text + "'");
  if (!(value >= 0.0 && value <= 1.0))
    syntax_error(line, tok.column, "probability " + tok.text + " is outside [0,1]");
  return value;
}

}  // namespace detail

inline OffspringModel parse_model(std::string_view text) {
  using detail::Token;
  std::vector<std::string> nonterminals, terminals;
  bool saw_nonterminals = false, saw_terminals = false;
  struct RawProduction {
    Token parent;
    std::vector<Token> children;
    double probability;
    int line;
  };
  std::vector<RawProduction> raw;

  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos
                                                 ? std::string_view::npos
                                                 : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;
    std::vector<Token> toks = detail::tokenize_line(line);
    if (toks.empty()) continue;

    if (toks[0].text == "nonterminals:") {
      if (saw_nonterminals)
        detail::syntax_error(line_no, toks[0].column, "repeated 'nonterminals:' header");
      if (!raw.empty() || saw_terminals)
        detail::syntax_error(line_no, toks[0].column,
                             "'nonterminals:' must be the first content line");
      if (toks.size() < 2)
        detail::syntax_error(line_no, toks[0].column, "expected at least one nonterminal name");
      for (size_t i = 1; i < toks.size(); ++i) nonterminals.push_back(toks[i].text);
      saw_nonterminals = true;
      continue;
    }
    if (toks[0].text == "terminals:") {
      if (!saw_nonterminals)
        detail::syntax_error(line_no, toks[0].column,
                             "'terminals:' must follow the 'nonterminals:' header");
      if (saw_terminals)
        detail::syntax_error(line_no, toks[0].column, "repeated 'terminals:' header");
      if (!raw.empty())
        detail::syntax_error(line_no, toks[0].column, "'terminals:' must precede productions");
      for (size_t i = 1; i < toks.size(); ++i) terminals.push_back(toks[i].text);
      saw_terminals = true;
      continue;
    }

    // Production line: PARENT -> CHILD... : PROB
    if (!saw_nonterminals || !saw_terminals)
      detail::syntax_error(line_no, toks[0].column,
                           "type headers must precede production lines");
    if (toks.size() < 5)
      detail::syntax_error(line_no, toks[0].column,
                           "expected 'parent -> child... : probability'");
    if (toks[1].text != "->")
      detail::syntax_error(line_no, toks[1].column, "expected '->'");
    const Token& colon = toks[toks.size() - 2];
    if (colon.text != ":")
      detail::syntax_error(line_no, colon.column, "expected ':' before the probability");
    RawProduction rp;
    rp.parent = toks[0];
    rp.children.assign(toks.begin() + 2, toks.end() - 2);
    if (rp.children.empty())
      detail::syntax_error(line_no, toks[1].column, "production has no offspring");
    rp.probability = detail::parse_probability(toks.back(), line_no);
    rp.line = line_no;
    raw.push_back(std::move(rp));
  }

  if (!saw_nonterminals)
    fail(ErrorKind::validation, "model: missing 'nonterminals:' header");
  if (!saw_terminals)
    fail(ErrorKind::validation, "model: missing 'terminals:' header");

  TypeTable types = make_type_table(std::move(nonterminals), std::move(terminals));
  std::vector<Production> productions;
  productions.reserve(raw.size());
  for (const auto& rp : raw) {
    int parent = types.index_of(rp.parent.text);
    if (parent < 0)
      detail::syntax_error(rp.line, rp.parent.column,
                           "unknown type name '" + rp.parent.text + "'");
    if (types.is_terminal(parent))
      detail::syntax_error(rp.line, rp.parent.column,
                           "terminal '" + rp.parent.text + "' cannot be a parent");
    Production p;
    p.parent = parent;
    p.offspring.assign(types.num_types(), 0);
    for (const Token& child : rp.children) {
      int u = types.index_of(child.text);
      if (u < 0)
        detail::syntax_error(rp.line, child.column,
                             "unknown type name '" + child.text + "'");
      ++p.offspring[u];
    }
    p.probability = rp.probability;
    productions.push_back(std::move(p));
  }
  return make_model(std::move(types), std::move(productions));
}

// Canonical text: headers, then productions in canonical order, expanded
// offspring, probabilities with 17 significant digits.  parse(serialize(m))
// reproduces m exactly, including probability bits.
inline std::string serialize_model(const OffspringModel& model) {
  const TypeTable& t = model.types;
  std::string out = "nonterminals:";
  for (int v = 0; v < t.num_nonterminals; ++v) out += " " + t.name(v);
  out += "\nterminals:";
  for (int u = t.num_nonterminals; u < t.num_types(); ++u) out += " " + t.name(u);
  out += "\n";
  for (const Production& p : model.productions) {
    out += t.name(p.parent) + " ->";
    for (size_t u = 0; u < p.offspring.size(); ++u)
      for (int k = 0; k < p.offspring[u]; ++k)
        out += " " + t.name(static_cast<int>(u));
    out += " : " + format_probability(p.probability) + "\n";
  }
  return out;
}

// Same production structure, probabilities replaced by the uniform
// distribution over each parent's productions.
inline OffspringModel uniform_init(const OffspringModel& structure) {
  std::vector<Production> productions = structure.productions;
  for (int v = 0; v < structure.types.num_nonterminals; ++v) {
    auto [b, e] = structure.parent_spans[v];
    for (int i = b; i < e; ++i)
      productions[i].probability = 1.0 / (e - b);
  }
  return make_model(structure.types, std::move(productions));
}

inline double uniform01(std::mt19937_64& rng) {
  // 53 random bits scaled into [0,1); avoids std::generate_canonical, whose
  // output is not pinned down across library implementations.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Same production structure, probabilities drawn positive and normalized
// per parent.  Deterministic in the seed.
inline OffspringModel random_init(const OffspringModel& structure, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Production> productions = structure.productions;
  for (int v = 0; v < structure.types.num_nonterminals; ++v) {
    auto [b, e] = structure.parent_spans[v];
    double sum = 0.0;
    for (int i = b; i < e; ++i) {
      double u;
      do { u = uniform01(rng); } while (u == 0.0);
      productions[i].probability = u;
      sum += u;
    }
    for (int i = b; i < e; ++i) productions[i].probability /= sum;
  }
  return make_model(structure.types, std::move(productions));
}

}  // namespace mtbp
