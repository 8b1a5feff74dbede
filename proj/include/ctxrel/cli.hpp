#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ctxrel/eval.hpp"
#include "ctxrel/model.hpp"
#include "ctxrel/synth.hpp"
#include "ctxrel/train.hpp"

namespace ctxrel::cli {

/// Bad or conflicting command-line input.
class UsageError : public Error {
 public:
  using Error::Error;
};

enum class Command { Synth, Train, Eval, ZSplit, GradCheck, Report };

std::string_view command_name(Command command);

struct RunConfig {
  Command command = Command::Report;
  std::optional<ModelKind> model;
  std::string train_path;
  std::string test_path;
  std::string emb_path;
  std::string fmaps_dir;
  std::string ckpt_path;
  std::string priors_path;
  std::string out_path;
  std::vector<std::string> inputs;  // results files for `report`
  TrainConfig train;
  std::vector<std::size_t> ks{50, 100};
  std::vector<Task> tasks;  // empty: predicate, plus phrase and relationship when detections exist
  bool top50 = false;
  bool strict_emb = false;
  std::uint64_t seed = 1;
  PlantedRule rule = PlantedRule::ContextXor;
};

std::string usage();

/// Fills defaults and checks that each flag applies to the chosen command
/// and that each command has its required paths. Throws UsageError.
RunConfig parse_flags(const std::vector<std::string>& args);

/// Executes one command. Returns the process exit status: 0 on success,
/// 1 on a failed gradient check or any runtime error.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

/// parse_flags + run. No arguments or a usage error print usage to `err`
/// and return 2.
int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Writes `content` to `path` through a temporary file and a rename.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace ctxrel::cli
