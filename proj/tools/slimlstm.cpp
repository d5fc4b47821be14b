// Command-line front end: train, sweep, gradcheck, params, bench.

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slimlstm/harness.hpp"

namespace {

using slim::ExperimentConfig;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (item.empty()) throw std::invalid_argument("empty item in list '" + text + "'");
    out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T, class Fn>
std::vector<T> parse_list(const std::string& key, const std::string& text, Fn parse_one) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) {
    ExperimentConfig scratch;
    slim::set_config_value(scratch, key, item);
    out.push_back(parse_one(scratch));
  }
  return out;
}

// Every config key is a string flag; values go through the same parser as
// config files. Flags the user actually passed override the file.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  bool bidirectional = false;

  void attach(CLI::App* app, const std::vector<std::string>& list_keys = {}) {
    app->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& key : slim::config_keys()) {
      if (key == "bidirectional") {
        app->add_flag("--bidirectional", bidirectional, "run the cell in both directions");
        continue;
      }
      const bool is_list = std::find(list_keys.begin(), list_keys.end(), key) != list_keys.end();
      const std::string help = "default " + slim::get_config_value(ExperimentConfig{}, key) +
                               (is_list ? " (comma-separated list)" : "");
      app->add_option("--" + key, values[key], help);
    }
  }

  bool given(const CLI::App* app, const std::string& key) const { return app->count("--" + key) > 0; }

  ExperimentConfig build(const CLI::App* app, const std::vector<std::string>& skip = {}) const {
    ExperimentConfig cfg = config_file.empty() ? ExperimentConfig{} : slim::load_config_file(config_file);
    for (const auto& key : slim::config_keys()) {
      if (std::find(skip.begin(), skip.end(), key) != skip.end() || !given(app, key)) continue;
      if (key == "bidirectional") {
        cfg.bidirectional = bidirectional;
      } else {
        slim::set_config_value(cfg, key, values.at(key));
      }
    }
    return cfg;
  }
};

int run_train(const ConfigFlags& flags, const CLI::App* app) {
  const ExperimentConfig cfg = flags.build(app);
  slim::validate(cfg);
  std::cerr << "training " << slim::to_string(cfg.variant) << " -> " << cfg.out << "\n";
  const auto result = slim::cmd_train(cfg, &std::cout);
  double best = 0;
  std::size_t best_epoch = 0;
  for (const auto& r : result.history) {
    if (r.test_acc > best || best_epoch == 0) {
      best = r.test_acc;
      best_epoch = r.epoch;
    }
  }
  std::cout << "best test acc " << best << " at epoch " << best_epoch << "\n";
  return 0;
}

int run_sweep(const ConfigFlags& flags, const CLI::App* app, std::size_t workers) {
  const std::vector<std::string> list_keys{"eta", "forget", "hidden", "variant"};
  slim::SweepSpec spec;
  spec.base = flags.build(app, list_keys);
  auto list_or_base = [&](const std::string& key) {
    return flags.given(app, key) ? flags.values.at(key) : slim::get_config_value(spec.base, key);
  };
  spec.etas = parse_list<double>("eta", list_or_base("eta"), [](const auto& c) { return c.eta; });
  spec.forgets = parse_list<double>("forget", list_or_base("forget"), [](const auto& c) { return c.forget; });
  spec.hiddens = parse_list<std::size_t>("hidden", list_or_base("hidden"), [](const auto& c) { return c.hidden; });
  spec.variants =
      parse_list<slim::CellVariant>("variant", list_or_base("variant"), [](const auto& c) { return c.variant; });
  const auto cells = slim::cmd_sweep(spec, workers, &std::cerr);
  std::cout << slim::format_sweep_table(cells);
  std::size_t failed = 0;
  for (const auto& c : cells) failed += c.error ? 1 : 0;
  if (failed) std::cerr << failed << " of " << cells.size() << " cells failed\n";
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated recurrent networks with slim LSTM variants"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "train one configuration, writing metrics.csv and checkpoint.bin");
  train_flags.attach(train);

  ConfigFlags sweep_flags;
  std::size_t workers = 1;
  auto* sweep = app.add_subcommand("sweep", "grid over eta x forget x hidden x variant, writing summary.csv");
  sweep_flags.attach(sweep, {"eta", "forget", "hidden", "variant"});
  sweep->add_option("--workers", workers, "concurrent cells")->check(CLI::PositiveNumber);

  slim::GradcheckOptions gc;
  std::string gc_variants = "srnn,lstm,lstm6,lstm_c6";
  std::string gc_activations = "sigmoid,tanh,relu";
  std::string gc_loss = "bce";
  auto* grad = app.add_subcommand("gradcheck", "compare BPTT gradients with finite differences");
  grad->add_option("--variant", gc_variants, "comma-separated variants")->capture_default_str();
  grad->add_option("--activation", gc_activations, "comma-separated activations")->capture_default_str();
  grad->add_option("--embed", gc.m, "m (<= 8)")->capture_default_str();
  grad->add_option("--hidden", gc.n, "n (<= 8)")->capture_default_str();
  grad->add_option("--seq-len", gc.T, "T (<= 5)")->capture_default_str();
  grad->add_option("--batch", gc.batch, "sequences per batch")->capture_default_str();
  grad->add_option("--vocab", gc.vocab, "token ids")->capture_default_str();
  grad->add_option("--seeds", gc.seeds, "random networks per variant x activation")->capture_default_str();
  grad->add_option("--seed", gc.base_seed, "first seed")->capture_default_str();
  grad->add_option("--forget", gc.forget, "slim forget constant")->capture_default_str();
  grad->add_option("--loss", gc_loss, "bce or cce")->capture_default_str();
  grad->add_option("--classes", gc.classes, "classes for cce")->capture_default_str();
  grad->add_option("--epsilon", gc.epsilon, "finite-difference step")->capture_default_str();
  grad->add_option("--relu-epsilon", gc.relu_epsilon, "finite-difference step for relu nets")->capture_default_str();
  grad->add_option("--tolerance", gc.tolerance, "max relative error")->capture_default_str();
  grad->add_flag("--bidirectional", gc.bidirectional, "check the bidirectional network");

  std::string p_variant = "lstm";
  std::size_t p_m = 32;
  std::size_t p_n = 100;
  bool p_bidir = false;
  bool json_lines = false;
  auto* params = app.add_subcommand("params", "parameter and per-step MAC counts");
  params->add_option("variant,--variant", p_variant, "cell variant")->capture_default_str();
  params->add_option("m,--embed", p_m, "input width")->capture_default_str();
  params->add_option("n,--hidden", p_n, "hidden width")->capture_default_str();
  params->add_flag("--bidirectional", p_bidir, "count both directions");
  params->add_flag("--json-lines", json_lines, "one JSON object per line");

  slim::BenchOptions bench_opts;
  std::string b_variants = "lstm,lstm6,lstm_c6";
  std::string b_activation = "sigmoid";
  auto* bench = app.add_subcommand("bench", "single-threaded forward+backward timing");
  bench->add_option("--variant", b_variants, "comma-separated variants")->capture_default_str();
  bench->add_option("--activation", b_activation, "cell activation")->capture_default_str();
  bench->add_option("--embed", bench_opts.m, "input width")->capture_default_str();
  bench->add_option("--hidden", bench_opts.n, "hidden width")->capture_default_str();
  bench->add_option("--seq-len", bench_opts.T, "sequence length")->capture_default_str();
  bench->add_option("--reps", bench_opts.reps, "timed repetitions (>= 3)")->capture_default_str();
  bench->add_option("--epoch-samples", bench_opts.epoch_samples, "sequences per epoch-equivalent")
      ->capture_default_str();
  bench->add_option("--seed", bench_opts.seed, "rng seed")->capture_default_str();
  bench->add_flag("--json-lines", json_lines, "one JSON object per line");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(train_flags, train);
    if (*sweep) return run_sweep(sweep_flags, sweep, workers);
    if (*grad) {
      gc.variants.clear();
      for (const auto& v : split_list(gc_variants)) gc.variants.push_back(slim::parse_variant(v));
      gc.activations.clear();
      for (const auto& a : split_list(gc_activations)) gc.activations.push_back(slim::parse_activation(a));
      gc.loss = slim::parse_loss(gc_loss);
      const auto report = slim::run_gradcheck(gc);
      std::cout << slim::format_gradcheck(report, gc.tolerance);
      std::cout << (report.passed ? "gradcheck PASS\n" : "gradcheck FAIL\n");
      return report.passed ? 0 : 1;
    }
    if (*params) {
      const auto r = slim::cmd_params(slim::parse_variant(p_variant), p_m, p_n, p_bidir);
      std::cout << slim::format_params(r, json_lines) << "\n";
      return 0;
    }
    if (*bench) {
      bench_opts.activation = slim::parse_activation(b_activation);
      for (const auto& v : split_list(b_variants)) {
        bench_opts.variant = slim::parse_variant(v);
        const auto r = slim::cmd_bench(bench_opts);
        std::cout << slim::format_bench(r, bench_opts, json_lines) << "\n" << std::flush;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
