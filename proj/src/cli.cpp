#include "ctxrel/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "ctxrel/checkpoint.hpp"
#include "ctxrel/gradcheck.hpp"
#include "ctxrel/report.hpp"

namespace ctxrel::cli {

namespace {

namespace fs = std::filesystem;

constexpr std::array<Command, 6> kCommands{Command::Synth,  Command::Train,     Command::Eval,
                                           Command::ZSplit, Command::GradCheck, Command::Report};

Command parse_command(const std::string& text) {
  for (Command c : kCommands) {
    if (command_name(c) == text) return c;
  }
  throw UsageError("unknown command '" + text + "' (expected synth, train, eval, zsplit, gradcheck or report)");
}

// Flags each command accepts besides --cmd.
const std::set<std::string>& allowed_flags(Command c) {
  static const std::map<Command, std::set<std::string>> table{
      {Command::Synth, {"--out", "--seed", "--rule"}},
      {Command::Train,
       {"--model", "--train", "--emb", "--fmaps", "--ckpt", "--out", "--seed", "--epochs", "--batch", "--lr",
        "--strict-emb"}},
      {Command::Eval,
       {"--model", "--test", "--emb", "--fmaps", "--ckpt", "--priors", "--out", "--k", "--tasks", "--top50",
        "--strict-emb"}},
      {Command::ZSplit,
       {"--model", "--train", "--test", "--emb", "--fmaps", "--ckpt", "--priors", "--out", "--k", "--tasks",
        "--top50", "--strict-emb"}},
      {Command::GradCheck, {"--model", "--seed", "--out"}},
      {Command::Report, {"--out", "inputs"}},
  };
  return table.at(c);
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::string(trim(item)));
  return out;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  for (const auto& item : split_commas(text)) {
    std::size_t k = 0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), k);
    if (item.empty() || ec != std::errc() || end != item.data() + item.size() || k == 0) {
      throw UsageError("--k expects a comma-separated list of integers >= 1, got '" + text + "'");
    }
    if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
  }
  if (ks.empty()) throw UsageError("--k needs at least one value");
  return ks;
}

void require(bool present, const std::string& flag, Command c) {
  if (!present) throw UsageError(std::string("--cmd ") + std::string(command_name(c)) + " needs " + flag);
}

UnknownWordPolicy policy_of(const RunConfig& cfg) {
  return cfg.strict_emb ? UnknownWordPolicy::Strict : UnknownWordPolicy::Fallback;
}

// Wraps loaders so failures name the offending input.
template <typename Fn>
auto load_named(const std::string& what, const std::string& path, Fn&& fn) {
  try {
    return fn(path);
  } catch (const std::exception& e) {
    throw Error(what + " '" + path + "': " + e.what());
  }
}

EmbeddingStore load_store(const RunConfig& cfg, ModelKind kind) {
  if (cfg.emb_path.empty()) {
    if (uses_context(kind)) throw Error(std::string(display_name(kind)) + " needs word embeddings (--emb)");
    return {};
  }
  return load_named("embeddings", cfg.emb_path, [](const std::string& p) { return load_embeddings_file(p); });
}

FeatureMapResolver make_resolver(const RunConfig& cfg, ModelKind kind) {
  if (cfg.fmaps_dir.empty()) {
    if (uses_appearance(kind)) throw Error(std::string(display_name(kind)) + " needs feature maps (--fmaps)");
    return {};
  }
  auto inner = directory_resolver(cfg.fmaps_dir);
  return [inner, dir = cfg.fmaps_dir](const std::string& ref) {
    try {
      return inner(ref);
    } catch (const std::exception& e) {
      throw Error("feature map '" + (fs::path(dir) / ref).string() + "': " + e.what());
    }
  };
}

Dataset load_data(const std::string& what, const std::string& path) {
  return load_named(what, path, [](const std::string& p) { return load_dataset_file(p); });
}

Model load_model(const RunConfig& cfg) {
  Model model = load_named("checkpoint", cfg.ckpt_path, [](const std::string& p) { return load_checkpoint_file(p); });
  if (cfg.model && *cfg.model != model.kind()) {
    throw Error("--model " + flag_name(*cfg.model) + " conflicts with checkpoint kind " + flag_name(model.kind()));
  }
  return model;
}

std::vector<Task> tasks_for(const RunConfig& cfg, const Dataset& test) {
  if (!cfg.tasks.empty()) return cfg.tasks;
  if (test.has_detections()) return {kAllTasks.begin(), kAllTasks.end()};
  return {Task::Predicate};
}

std::string method_label(const RunConfig& cfg, ModelKind kind) {
  std::string label(display_name(kind));
  if (!cfg.priors_path.empty()) label += " + Language Priors";
  return label;
}

int evaluate_and_write(const RunConfig& cfg, const Model& model, const Dataset& test,
                       const std::set<TripletType>* only, std::string_view split, std::ostream& out) {
  const EmbeddingStore store = load_store(cfg, model.kind());
  LanguagePrior prior;
  if (!cfg.priors_path.empty()) {
    prior = load_named("language priors", cfg.priors_path,
                       [](const std::string& p) { return load_language_prior_file(p); });
  }
  PredictContext ctx;
  ctx.embeddings = &store;
  ctx.resolver = make_resolver(cfg, model.kind());
  ctx.prior = cfg.priors_path.empty() ? nullptr : &prior;
  ctx.policy = policy_of(cfg);
  ctx.top50 = cfg.top50;

  EvalOptions options;
  options.ks = cfg.ks;
  options.tasks = tasks_for(cfg, test);
  options.only_types = only;
  const EvalResult result = evaluate(model, test, ctx, options);

  const std::string method = method_label(cfg, model.kind());
  std::ostringstream results;
  write_results(results, method, split, result.rows);
  write_file_atomic(cfg.out_path, results.str());
  std::ostringstream preds;
  write_predictions(preds, result.predictions, model.predicate_names());
  write_file_atomic(cfg.out_path + ".predictions", preds.str());

  std::vector<ResultEntry> entries;
  for (const auto& r : result.rows) {
    entries.push_back({method, std::string(split), r.task, r.k, r.result.matched, r.result.total});
  }
  out << render_report(entries);
  return 0;
}

int run_synth(const RunConfig& cfg, std::ostream& out) {
  SynthConfig sc = cfg.rule == PlantedRule::ContextLinear ? SynthConfig::zero_shot_preset() : SynthConfig{};
  sc.seed = cfg.seed;
  const SynthOutput data = synth_generate(sc);
  const fs::path dir(cfg.out_path);
  fs::create_directories(dir);

  std::ostringstream train_json, test_json, held;
  save_dataset(train_json, data.train);
  save_dataset(test_json, data.test);
  held << "subject\tpredicate\tobject\n";
  for (const auto& t : data.held_out) held << t.subject << '\t' << t.predicate << '\t' << t.object << '\n';
  write_file_atomic((dir / "train.json").string(), train_json.str());
  write_file_atomic((dir / "test.json").string(), test_json.str());
  write_file_atomic((dir / "embeddings.txt").string(), data.embedding_text);
  write_file_atomic((dir / "held_out.tsv").string(), held.str());
  for (const auto& [ref, fm] : data.feature_maps) {
    const fs::path path = dir / "fmaps" / ref;
    fs::create_directories(path.parent_path());
    std::ostringstream bytes(std::ios::binary);
    save_feature_map(bytes, *fm);
    write_file_atomic(path.string(), bytes.str());
  }
  out << "synth: rule " << rule_name(sc.rule) << ", " << data.train.images.size() << " train / "
      << data.test.images.size() << " test images, " << data.feature_maps.size() << " feature maps, "
      << data.held_out.size() << " held-out triplet types -> " << dir.string() << "\n";
  return 0;
}

int run_train(const RunConfig& cfg, std::ostream& out) {
  const ModelKind kind = *cfg.model;
  const Dataset ds = load_data("training set", cfg.train_path);
  const EmbeddingStore store = load_store(cfg, kind);
  const FeatureMapResolver resolver = make_resolver(cfg, kind);
  ModelOptions options;
  options.seed = cfg.seed;
  Model model = make_model(kind, ds, store, resolver, options);
  const auto samples = make_samples(model, ds, store, resolver, policy_of(cfg));
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const TrainLog log = train(model, samples, tc);
  save_checkpoint_file(cfg.ckpt_path, model);
  if (!cfg.out_path.empty()) {
    std::ostringstream text;
    log.write(text);
    write_file_atomic(cfg.out_path, text.str());
  }
  const auto& last = log.epochs.back();
  out << "train: " << display_name(kind) << ", " << model.parameter_count() << " parameters, " << samples.size()
      << " samples, " << log.epochs.size() << " epochs, final loss " << std::fixed << std::setprecision(6)
      << last.mean_loss << ", train accuracy " << last.train_accuracy << " -> " << cfg.ckpt_path << "\n";
  return 0;
}

int run_eval(const RunConfig& cfg, std::ostream& out) {
  const Model model = load_model(cfg);
  const Dataset test = load_data("test set", cfg.test_path);
  return evaluate_and_write(cfg, model, test, nullptr, "all", out);
}

int run_zsplit(const RunConfig& cfg, std::ostream& out) {
  const Dataset train_ds = load_data("training set", cfg.train_path);
  const Dataset test = load_data("test set", cfg.test_path);
  const auto split = zero_shot_split(train_ds, test);
  if (cfg.ckpt_path.empty()) {
    std::ostringstream text;
    text << "subject\tpredicate\tobject\n";
    for (const auto& t : split) text << t.subject << '\t' << t.predicate << '\t' << t.object << '\n';
    write_file_atomic(cfg.out_path, text.str());
    out << "zsplit: " << split.size() << " test triplet types unseen in training -> " << cfg.out_path << "\n";
    return 0;
  }
  const Model model = load_model(cfg);
  return evaluate_and_write(cfg, model, test, &split, "zero-shot", out);
}

int run_gradcheck(const RunConfig& cfg, std::ostream& out) {
  std::vector<ModelKind> kinds;
  if (cfg.model) {
    kinds.push_back(*cfg.model);
  } else {
    kinds.assign(kAllModelKinds.begin(), kAllModelKinds.end());
  }
  GradCheckConfig gc;
  gc.seed = cfg.seed;
  std::ostringstream text;
  text << "kind\tinstances\tcoordinates\tworst_error\tstatus\n";
  bool ok = true;
  for (ModelKind kind : kinds) {
    const GradCheckReport r = check_gradients(kind, gc);
    ok = ok && r.passed;
    text << display_name(kind) << '\t' << r.instances << '\t' << r.coordinates << '\t' << std::scientific
         << std::setprecision(3) << r.worst.error << '\t' << (r.passed ? "pass" : "FAIL") << '\n';
  }
  if (!cfg.out_path.empty()) write_file_atomic(cfg.out_path, text.str());
  out << text.str();
  return ok ? 0 : 1;
}

int run_report(const RunConfig& cfg, std::ostream& out) {
  std::vector<ResultEntry> entries;
  for (const auto& path : cfg.inputs) {
    auto more = read_results_file(path);
    entries.insert(entries.end(), more.begin(), more.end());
  }
  const std::string text = render_report(entries);
  if (cfg.out_path.empty()) {
    out << text;
  } else {
    write_file_atomic(cfg.out_path, text);
  }
  return 0;
}

}  // namespace

std::string_view command_name(Command command) {
  switch (command) {
    case Command::Synth: return "synth";
    case Command::Train: return "train";
    case Command::Eval: return "eval";
    case Command::ZSplit: return "zsplit";
    case Command::GradCheck: return "gradcheck";
    case Command::Report: return "report";
  }
  return "?";
}

std::string usage() {
  return "usage: ctxrel --cmd <command> [flags]\n"
         "\n"
         "commands:\n"
         "  synth      --out DIR [--seed N] [--rule xor|linear]\n"
         "  train      --model KIND --train FILE --ckpt FILE [--emb FILE] [--fmaps DIR] [--out LOG]\n"
         "             [--epochs N] [--batch N] [--lr X] [--seed N] [--strict-emb]\n"
         "  eval       --ckpt FILE --test FILE --out FILE [--emb FILE] [--fmaps DIR] [--priors FILE]\n"
         "             [--k 50,100] [--tasks predicate,phrase,relationship] [--top50] [--strict-emb]\n"
         "  zsplit     --train FILE --test FILE --out FILE [--ckpt FILE and the eval flags]\n"
         "  gradcheck  [--model KIND] [--seed N] [--out FILE]\n"
         "  report     RESULTS... [--out FILE]\n"
         "\n"
         "model kinds: baseline1-app, baseline1-spatial, baseline2-app, baseline2-spatial,\n"
         "             spatial+c, ap+c, ap+c+at, ap+c+cat\n";
}

RunConfig parse_flags(const std::vector<std::string>& args) {
  if (args.empty()) throw UsageError("no arguments");
  CLI::App app{"ctxrel"};
  app.set_help_flag();
  std::string cmd, model, k_text, tasks_text, rule_text;
  RunConfig cfg;
  app.add_option("--cmd", cmd);
  app.add_option("--model", model);
  app.add_option("--train", cfg.train_path);
  app.add_option("--test", cfg.test_path);
  app.add_option("--emb", cfg.emb_path);
  app.add_option("--fmaps", cfg.fmaps_dir);
  app.add_option("--ckpt", cfg.ckpt_path);
  app.add_option("--priors", cfg.priors_path);
  app.add_option("--out", cfg.out_path);
  app.add_option("--k", k_text);
  app.add_option("--tasks", tasks_text);
  app.add_option("--rule", rule_text);
  app.add_option("--seed", cfg.seed);
  app.add_option("--epochs", cfg.train.epochs);
  app.add_option("--batch", cfg.train.batch_size);
  app.add_option("--lr", cfg.train.lr);
  app.add_flag("--top50", cfg.top50);
  app.add_flag("--strict-emb", cfg.strict_emb);
  app.add_option("inputs", cfg.inputs);

  std::vector<const char*> argv{"ctxrel"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (cmd.empty()) throw UsageError("--cmd is required");
  cfg.command = parse_command(cmd);
  const auto& allowed = allowed_flags(cfg.command);
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->count() == 0) continue;
    const std::string name = opt->get_name();
    if (name == "--cmd") continue;
    if (allowed.count(name) == 0) {
      throw UsageError((name == "inputs" ? std::string("positional arguments") : name) + " cannot be used with --cmd " +
                       cmd);
    }
  }

  try {
    if (app.count("--model") > 0) cfg.model = parse_model_kind(model);
    if (app.count("--rule") > 0) cfg.rule = parse_rule(rule_text);
    if (app.count("--tasks") > 0) {
      if (tasks_text.empty()) throw UsageError("--tasks needs at least one task");
      for (const auto& t : split_commas(tasks_text)) {
        const Task task = parse_task(t);
        if (std::find(cfg.tasks.begin(), cfg.tasks.end(), task) == cfg.tasks.end()) cfg.tasks.push_back(task);
      }
    }
    cfg.train.validate();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (app.count("--k") > 0) cfg.ks = parse_ks(k_text);
  if (cfg.train.epochs == 0) throw UsageError("--epochs must be >= 1");

  const Command c = cfg.command;
  switch (c) {
    case Command::Synth:
      require(!cfg.out_path.empty(), "--out", c);
      break;
    case Command::Train:
      require(cfg.model.has_value(), "--model", c);
      require(!cfg.train_path.empty(), "--train", c);
      require(!cfg.ckpt_path.empty(), "--ckpt", c);
      if (uses_context(*cfg.model)) require(!cfg.emb_path.empty(), "--emb for a context kind", c);
      if (uses_appearance(*cfg.model)) require(!cfg.fmaps_dir.empty(), "--fmaps for an appearance kind", c);
      break;
    case Command::Eval:
      require(!cfg.ckpt_path.empty(), "--ckpt", c);
      require(!cfg.test_path.empty(), "--test", c);
      require(!cfg.out_path.empty(), "--out", c);
      break;
    case Command::ZSplit:
      require(!cfg.train_path.empty(), "--train", c);
      require(!cfg.test_path.empty(), "--test", c);
      require(!cfg.out_path.empty(), "--out", c);
      if (cfg.ckpt_path.empty()) {
        for (const char* flag : {"--model", "--emb", "--fmaps", "--priors", "--k", "--tasks", "--top50", "--strict-emb"}) {
          if (app.count(flag) > 0) throw UsageError(std::string(flag) + " needs --ckpt with --cmd zsplit");
        }
      }
      break;
    case Command::GradCheck:
      break;
    case Command::Report:
      require(!cfg.inputs.empty(), "at least one results file", c);
      break;
  }
  return cfg;
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    switch (config.command) {
      case Command::Synth: return run_synth(config, out);
      case Command::Train: return run_train(config, out);
      case Command::Eval: return run_eval(config, out);
      case Command::ZSplit: return run_zsplit(config, out);
      case Command::GradCheck: return run_gradcheck(config, out);
      case Command::Report: return run_report(config, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = parse_flags(args);
  } catch (const UsageError& e) {
    if (!args.empty()) err << "error: " << e.what() << "\n\n";
    err << usage();
    return 2;
  }
  return run(cfg, out, err);
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + tmp.string() + "'");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) throw Error("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("cannot move '" + tmp.string() + "' to '" + path + "': " + ec.message());
  }
}

}  // namespace ctxrel::cli
