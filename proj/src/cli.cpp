#include "sentipipe/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sentipipe/analyzer.hpp"
#include "sentipipe/corpus.hpp"
#include "sentipipe/error.hpp"
#include "sentipipe/eval.hpp"
#include "sentipipe/model.hpp"
#include "sentipipe/textproc.hpp"
#include "sentipipe/train.hpp"

namespace sentipipe {
namespace {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingFile:
    case ErrorCode::kIoError:
    case ErrorCode::kModelNotFound:
    case ErrorCode::kFormatError:
    case ErrorCode::kVersionUnsupported:
      return kExitRuntime;
    default:
      return kExitUsage;
  }
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

struct TrainOptions {
  std::string task;
  std::string lang;
  std::string train_path;
  std::string heldout_path;
  std::string out_path;
  std::string name;
  std::string weighting;
  std::string encoder = "transformer";
  std::size_t epochs = TrainConfig{}.epochs;
  double lr = TrainConfig{}.peak_lr;
  std::size_t batch_size = TrainConfig{}.batch_size;
  double warmup = TrainConfig{}.warmup_fraction;
  std::size_t vocab_size = 1000;
  std::uint64_t seed = TrainConfig{}.seed;
  std::size_t embed_dim = ModelConfig{}.embed_dim;
  std::size_t heads = ModelConfig{}.num_heads;
  std::size_t layers = ModelConfig{}.num_layers;
  std::size_t ffn_dim = ModelConfig{}.ffn_dim;
  std::size_t max_len = ModelConfig{}.max_len;
  double dropout = ModelConfig{}.dropout_rate;
  bool lowercase = false;
};

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  const Task task = parse_task(o.task);
  const auto& scheme = scheme_for(task);
  // Class weights by default only where the label distribution is skewed
  // (the emotion task), matching the recipe the toolkit reproduces.
  const auto weighting = o.weighting.empty()
                             ? (task == Task::kEmotion ? ClassWeighting::kBalanced
                                                       : ClassWeighting::kNone)
                             : parse_weighting(o.weighting);

  TrainConfig tc;
  tc.peak_lr = o.lr;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch_size;
  tc.warmup_fraction = o.warmup;
  tc.class_weighting = weighting;
  tc.seed = o.seed;
  tc.normalize.lowercase = o.lowercase;
  tc.validate();

  err << "task=" << o.task << " lang=" << o.lang << " encoder=" << o.encoder
      << " epochs=" << tc.epochs << " lr=" << tc.peak_lr << " batch_size=" << tc.batch_size
      << " warmup=" << tc.warmup_fraction << " vocab_size=" << o.vocab_size
      << " weighting=" << to_string(weighting) << " seed=" << tc.seed << '\n';

  const auto train_set = load_dataset(o.train_path, scheme, o.lang, Split::kTrain);
  std::optional<Dataset> heldout;
  if (!o.heldout_path.empty()) heldout = load_dataset(o.heldout_path, scheme, o.lang, Split::kTest);

  const auto stats = dataset_stats(train_set);
  const auto weights = compute_class_weights(stats, weighting);
  err << "train_examples=" << stats.total << " class_weights";
  for (std::size_t c = 0; c < scheme.size(); ++c) {
    err << ' ' << scheme.label(c) << '=' << fixed(weights.values[c], 4);
  }
  err << '\n';

  std::vector<std::string> normalized;
  normalized.reserve(train_set.size());
  for (const auto& ex : train_set.examples()) normalized.push_back(normalize_tweet(ex.text, tc.normalize));
  const auto tokenizer = train_bpe(normalized, o.vocab_size);
  err << "tokenizer vocab=" << tokenizer.vocab_size() << " merges=" << tokenizer.merges().size()
      << '\n';

  ModelConfig config;
  config.encoder = parse_encoder(o.encoder);
  config.vocab_size = tokenizer.vocab_size();
  config.num_classes = scheme.size();
  config.embed_dim = o.embed_dim;
  config.num_heads = o.heads;
  config.num_layers = o.layers;
  config.ffn_dim = o.ffn_dim;
  config.max_len = o.max_len;
  config.dropout_rate = o.dropout;
  const auto initial = init_model(config, o.seed);
  err << "parameters=" << initial.total_size() << '\n';

  const auto result = train(config, initial, train_set, tokenizer, tc, heldout ? &*heldout : nullptr);
  out << to_jsonl(result.history) << std::flush;

  const Analyzer analyzer(task, o.lang, o.name.empty() ? o.encoder : o.name, tc.normalize,
                          tokenizer, config, result.params);
  save_model(analyzer, o.out_path);
  err << "saved " << o.out_path << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, bool json,
             std::ostream& out, std::ostream& err) {
  const auto analyzer = load_model(model_path);
  const auto data = load_dataset(data_path, analyzer.scheme(), analyzer.language(), Split::kTest);
  const auto report = evaluate(analyzer, data, to_string(analyzer.task()), analyzer.model_name());

  std::ostream& human = json ? err : out;
  human << "micro_f1=" << fixed(report.micro_f1, 3) << " macro_f1=" << fixed(report.macro_f1, 3)
        << '\n';
  human << "label\tprecision\trecall\tf1\tsupport\n";
  for (std::size_t c = 0; c < report.labels.size(); ++c) {
    std::size_t support = 0;
    for (std::size_t p = 0; p < report.labels.size(); ++p) support += report.confusion(c, p);
    human << report.labels[c] << '\t' << fixed(report.per_class[c].precision, 3) << '\t'
          << fixed(report.per_class[c].recall, 3) << '\t' << fixed(report.per_class[c].f1, 3)
          << '\t' << support << '\n';
  }
  if (json) out << to_json(report).dump() << '\n';
  return kExitOk;
}

int cmd_predict(const std::string& model_path, const std::optional<std::string>& text,
                bool from_stdin, std::istream& in, std::ostream& out) {
  const auto analyzer = load_model(model_path);
  std::vector<std::string> texts;
  if (from_stdin) {
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      texts.push_back(line);
    }
  } else {
    texts.push_back(*text);
  }
  for (const auto& p : analyzer.predict_batch(texts)) out << to_json(p).dump() << '\n';
  return kExitOk;
}

int cmd_stats(const std::string& data_path, const std::string& task, const std::string& lang,
              const std::string& split, bool json, std::ostream& out) {
  const auto& scheme = scheme_for(parse_task(task));
  const auto data = load_dataset(data_path, scheme, lang, parse_split(split));
  const auto stats = dataset_stats(data);
  if (json) {
    auto doc = stats_to_json(stats, scheme);
    doc["language"] = lang;
    doc["split"] = split;
    out << doc.dump() << '\n';
  } else {
    out << render_stats_text(stats, scheme);
  }
  return kExitOk;
}

int cmd_bench(const std::string& reports_dir, const std::string& out_path, std::ostream& out,
              std::ostream& err) {
  if (!fs::is_directory(reports_dir)) {
    err << "error: reports directory '" << reports_dir << "' not found\n";
    return kExitUsage;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(reports_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<EvalReport> reports;
  for (const auto& file : files) {
    try {
      std::ifstream in(file);
      reports.push_back(eval_report_from_json(nlohmann::json::parse(in)));
    } catch (const std::exception& e) {
      err << "error: malformed report " << file.string() << ": " << e.what() << '\n';
      return kExitUsage;
    }
  }
  const auto table = render_benchmark(reports);
  if (out_path.empty()) {
    out << table;
    return kExitOk;
  }
  std::ofstream file(out_path);
  file << table;
  file.close();
  if (!file) throw Error(ErrorCode::kIoError, "cannot write '" + out_path + "'");
  err << "wrote " << out_path << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"sentipipe: sentiment and emotion analysis for tweets", "sentipipe"};
  app.require_subcommand(1);

  TrainOptions t;
  auto* train_cmd = app.add_subcommand("train", "Train a tokenizer and classifier, write a model file");
  train_cmd->add_option("--task", t.task, "sentiment | emotion")->required()
      ->check(CLI::IsMember({"sentiment", "emotion"}));
  train_cmd->add_option("--lang", t.lang, "language code, e.g. es or en")->required();
  train_cmd->add_option("--train", t.train_path, "training TSV (id, text, label)")->required();
  train_cmd->add_option("--heldout", t.heldout_path, "held-out TSV scored after each epoch");
  train_cmd->add_option("--out", t.out_path, "output model file")->required();
  train_cmd->add_option("--epochs", t.epochs)->capture_default_str();
  train_cmd->add_option("--lr", t.lr, "peak learning rate")->capture_default_str();
  train_cmd->add_option("--batch-size", t.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--warmup", t.warmup, "warmup fraction")->capture_default_str();
  train_cmd->add_option("--vocab-size", t.vocab_size)->capture_default_str();
  train_cmd->add_option("--weighting", t.weighting,
                        "none | balanced (default: balanced for emotion, none for sentiment)")
      ->check(CLI::IsMember({"none", "balanced"}));
  train_cmd->add_option("--seed", t.seed)->capture_default_str();
  train_cmd->add_option("--encoder", t.encoder)->capture_default_str()
      ->check(CLI::IsMember({"transformer", "linear_bow"}));
  train_cmd->add_option("--embed-dim", t.embed_dim)->capture_default_str();
  train_cmd->add_option("--heads", t.heads)->capture_default_str();
  train_cmd->add_option("--layers", t.layers)->capture_default_str();
  train_cmd->add_option("--ffn-dim", t.ffn_dim)->capture_default_str();
  train_cmd->add_option("--max-len", t.max_len)->capture_default_str();
  train_cmd->add_option("--dropout", t.dropout)->capture_default_str();
  train_cmd->add_option("--name", t.name, "model name recorded in reports (default: encoder)");
  train_cmd->add_flag("--lowercase", t.lowercase, "lowercase ASCII during normalization");

  std::string model_path;
  std::string data_path;
  bool json = false;
  auto* eval_cmd = app.add_subcommand("eval", "Score a model on a labeled TSV");
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--data", data_path)->required();
  eval_cmd->add_flag("--json", json, "print the report as JSON on stdout");

  std::optional<std::string> text;
  bool from_stdin = false;
  auto* predict_cmd = app.add_subcommand("predict", "Predict labels, one JSON line per input");
  predict_cmd->add_option("--model", model_path)->required();
  auto* text_opt = predict_cmd->add_option("--text", text);
  auto* stdin_opt = predict_cmd->add_flag("--stdin", from_stdin, "read one text per line");
  text_opt->excludes(stdin_opt);
  stdin_opt->excludes(text_opt);

  std::string task;
  std::string lang = "und";
  std::string split = "other";
  auto* stats_cmd = app.add_subcommand("stats", "Label statistics of a TSV dataset");
  stats_cmd->add_option("--data", data_path)->required();
  stats_cmd->add_option("--task", task)->required()->check(CLI::IsMember({"sentiment", "emotion"}));
  stats_cmd->add_option("--lang", lang)->capture_default_str();
  stats_cmd->add_option("--split", split)->capture_default_str()
      ->check(CLI::IsMember({"train", "test", "other"}));
  stats_cmd->add_flag("--json", json);

  std::string reports_dir;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "Render EvalReport JSON files as a markdown table");
  bench_cmd->add_option("--reports", reports_dir)->required();
  bench_cmd->add_option("--out", bench_out, "markdown output file (default: stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(t, out, err);
    if (eval_cmd->parsed()) return cmd_eval(model_path, data_path, json, out, err);
    if (predict_cmd->parsed()) {
      if (!text && !from_stdin) {
        err << "error: one of --text or --stdin is required\n\n" << predict_cmd->help();
        return kExitUsage;
      }
      return cmd_predict(model_path, text, from_stdin, in, out);
    }
    if (stats_cmd->parsed()) return cmd_stats(data_path, task, lang, split, json, out);
    if (bench_cmd->parsed()) return cmd_bench(reports_dir, bench_out, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace sentipipe
