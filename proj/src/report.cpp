#include "ctxrel/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace ctxrel {

namespace {

constexpr std::size_t kCellWidth = 9;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::size_t parse_count(const std::string& text, std::size_t line_no) {
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw Error("results line " + std::to_string(line_no) + ": bad count '" + text + "'");
  }
  return v;
}

std::string row_label(const ResultEntry& e) { return e.split == "all" ? e.method : e.method + " (" + e.split + ")"; }

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string strip_trailing_spaces(const std::string& text) {
  std::string out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line.erase(line.find_last_not_of(' ') + 1);
    out += line + "\n";
  }
  return out;
}

}  // namespace

std::vector<ResultEntry> read_results(std::istream& in) {
  std::vector<ResultEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("method\t", 0) == 0) continue;
    const auto f = split_tabs(line);
    if (f.size() != 7) throw Error("results line " + std::to_string(line_no) + ": expected 7 tab-separated fields");
    ResultEntry e;
    e.method = f[0];
    e.split = f[1];
    e.task = parse_task(f[2]);
    e.k = parse_count(f[3], line_no);
    e.matched = parse_count(f[4], line_no);
    e.total = parse_count(f[5], line_no);
    if (e.k == 0) throw Error("results line " + std::to_string(line_no) + ": k must be >= 1");
    if (e.matched > e.total) throw Error("results line " + std::to_string(line_no) + ": matched exceeds total");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ResultEntry> read_results_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open results file '" + path + "'");
  try {
    return read_results(in);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string render_report(std::span<const ResultEntry> entries) {
  std::vector<std::string> labels;
  std::set<std::size_t, std::greater<>> ks;
  std::map<std::tuple<std::string, Task, std::size_t>, const ResultEntry*> cells;
  for (const auto& e : entries) {
    const std::string label = row_label(e);
    if (std::find(labels.begin(), labels.end(), label) == labels.end()) labels.push_back(label);
    ks.insert(e.k);
    cells[{label, e.task, e.k}] = &e;
  }

  std::size_t method_width = std::string("Method").size();
  for (const auto& l : labels) method_width = std::max(method_width, l.size());
  method_width += 2;
  const std::size_t group_width =
      std::max<std::size_t>(std::string(task_title(Task::Relationship)).size() + 2, ks.size() * kCellWidth + 1);

  bool any_empty = false;
  std::ostringstream os;
  os << pad("Method", method_width);
  for (Task t : kAllTasks) os << "|" << pad(" " + std::string(task_title(t)), group_width);
  os << "\n" << pad("", method_width);
  for (std::size_t g = 0; g < kAllTasks.size(); ++g) {
    std::string cols;
    for (std::size_t k : ks) cols += right("R@" + std::to_string(k), kCellWidth);
    os << "|" << pad(cols, group_width);
  }
  os << "\n" << std::string(method_width, '-');
  for (std::size_t g = 0; g < kAllTasks.size(); ++g) os << "+" << std::string(group_width, '-');
  os << "\n";

  for (const auto& label : labels) {
    os << pad(label, method_width);
    for (Task t : kAllTasks) {
      std::string cols;
      for (std::size_t k : ks) {
        const auto it = cells.find({label, t, k});
        std::string cell = "-";
        if (it != cells.end()) {
          const ResultEntry& e = *it->second;
          if (e.total == 0) {
            cell = "n/a";
            any_empty = true;
          } else {
            std::ostringstream v;
            v << std::fixed << std::setprecision(2)
              << 100.0 * static_cast<double>(e.matched) / static_cast<double>(e.total);
            cell = v.str();
          }
        }
        cols += right(cell, kCellWidth);
      }
      os << "|" << pad(cols, group_width);
    }
    os << "\n";
  }
  if (labels.empty()) os << "(no results)\n";

  os << "\nRecall@K in percent. '-' marks a task that was not evaluated.\n";
  if (any_empty) os << "'n/a' marks a task with no ground truth.\n";
  os << "Figures come from the synthetic desk-scale harness. Published benchmark numbers need the original\n"
        "images, the pretrained backbone and the released detections, so they are not reproduced here.\n";
  return strip_trailing_spaces(os.str());
}

}  // namespace ctxrel
