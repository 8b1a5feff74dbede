#pragma once

#include <istream>
#include <span>
#include <string>
#include <vector>

#include "ctxrel/eval.hpp"

namespace ctxrel {

/// One line of a results file written by `write_results`.
struct ResultEntry {
  std::string method;
  std::string split;
  Task task = Task::Predicate;
  std::size_t k = 0;
  std::size_t matched = 0;
  std::size_t total = 0;
};

std::vector<ResultEntry> read_results(std::istream& in);
std::vector<ResultEntry> read_results_file(const std::string& path);

/// Method x task x R@K table. Rows keep first-appearance order; k columns
/// run from largest to smallest; recalls are percentages with two decimals.
std::string render_report(std::span<const ResultEntry> entries);

}  // namespace ctxrel
