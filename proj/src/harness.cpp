#include "slimlstm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

namespace slim {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view why) {
  throw std::invalid_argument("config key '" + std::string(key) + "': invalid value '" +
                              std::string(value) + "' (" + std::string(why) + ")");
}

template <class Int>
Int parse_int(std::string_view key, std::string_view text) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) bad_value(key, text, "expected an integer");
  return v;
}

double parse_real(std::string_view key, std::string_view text) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    bad_value(key, text, "expected a finite number");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  bad_value(key, text, "expected true/false");
}

template <class Fn>
auto parse_enum(std::string_view key, std::string_view text, Fn fn) {
  try {
    return fn(text);
  } catch (const std::invalid_argument& e) {
    bad_value(key, text, e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "variant", "activation", "hidden",    "embed",         "seq-len", "vocab",   "eta",
      "forget",  "epochs",     "batch",     "optimizer",     "loss",    "seed",    "data-seed",
      "bidirectional", "data", "out",       "samples",       "classes", "embeddings"};
  return keys;
}

void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view raw) {
  const std::string_view value = trim(raw);
  if (key == "variant") {
    cfg.variant = parse_enum(key, value, parse_variant);
  } else if (key == "activation") {
    cfg.activation = parse_enum(key, value, parse_activation);
  } else if (key == "hidden") {
    cfg.hidden = parse_int<std::size_t>(key, value);
  } else if (key == "embed") {
    cfg.embed = parse_int<std::size_t>(key, value);
  } else if (key == "seq-len") {
    cfg.seq_len = parse_int<std::size_t>(key, value);
  } else if (key == "vocab") {
    cfg.vocab = parse_int<std::size_t>(key, value);
  } else if (key == "eta") {
    cfg.eta = parse_real(key, value);
  } else if (key == "forget") {
    cfg.forget = parse_real(key, value);
  } else if (key == "epochs") {
    cfg.epochs = parse_int<std::size_t>(key, value);
  } else if (key == "batch") {
    cfg.batch = parse_int<std::size_t>(key, value);
  } else if (key == "optimizer") {
    cfg.optimizer = parse_enum(key, value, parse_optimizer);
  } else if (key == "loss") {
    cfg.loss = parse_enum(key, value, parse_loss);
  } else if (key == "seed") {
    cfg.seed = parse_int<std::uint64_t>(key, value);
  } else if (key == "data-seed") {
    cfg.data_seed = parse_int<std::uint64_t>(key, value);
  } else if (key == "bidirectional") {
    cfg.bidirectional = parse_bool(key, value);
  } else if (key == "data") {
    parse_data_source(value);
    cfg.data = std::string(value);
  } else if (key == "out") {
    cfg.out = std::string(value);
  } else if (key == "samples") {
    cfg.samples = parse_int<std::size_t>(key, value);
  } else if (key == "classes") {
    cfg.classes = parse_int<std::size_t>(key, value);
  } else if (key == "embeddings") {
    cfg.embeddings = std::string(value);
  } else {
    throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
  }
}

std::string get_config_value(const ExperimentConfig& cfg, std::string_view key) {
  if (key == "variant") return std::string(to_string(cfg.variant));
  if (key == "activation") return std::string(to_string(cfg.activation));
  if (key == "hidden") return std::to_string(cfg.hidden);
  if (key == "embed") return std::to_string(cfg.embed);
  if (key == "seq-len") return std::to_string(cfg.seq_len);
  if (key == "vocab") return std::to_string(cfg.vocab);
  if (key == "eta") return fmt::format("{}", cfg.eta);
  if (key == "forget") return fmt::format("{}", cfg.forget);
  if (key == "epochs") return std::to_string(cfg.epochs);
  if (key == "batch") return std::to_string(cfg.batch);
  if (key == "optimizer") return std::string(to_string(cfg.optimizer));
  if (key == "loss") return std::string(to_string(cfg.loss));
  if (key == "seed") return std::to_string(cfg.seed);
  if (key == "data-seed") return std::to_string(cfg.data_seed);
  if (key == "bidirectional") return cfg.bidirectional ? "true" : "false";
  if (key == "data") return cfg.data;
  if (key == "out") return cfg.out;
  if (key == "samples") return std::to_string(cfg.samples);
  if (key == "classes") return std::to_string(cfg.classes);
  if (key == "embeddings") return cfg.embeddings;
  throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
}

void validate(const ExperimentConfig& cfg) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid config: " + msg); };
  if (cfg.hidden == 0) fail("hidden must be >= 1");
  if (cfg.embed == 0) fail("embed must be >= 1");
  if (cfg.seq_len == 0) fail("seq-len must be >= 1");
  if (!(cfg.eta > 0) || !std::isfinite(cfg.eta)) fail("eta must be > 0");
  if (!(cfg.forget > -1.0 && cfg.forget < 1.0)) fail("forget must satisfy -1 < f < 1");
  if (cfg.epochs == 0) fail("epochs must be >= 1");
  if (cfg.batch == 0) fail("batch must be >= 1");
  if (cfg.classes < 2) fail("classes must be >= 2");
  if (cfg.loss == LossKind::binary_cross_entropy && cfg.classes != 2) {
    fail("binary cross-entropy needs classes = 2");
  }
  if (cfg.out.empty()) fail("out must be set");
  const DataSource src = parse_data_source(cfg.data);
  if (src.synthetic) {
    if (cfg.samples < 10) fail("samples must be >= 10");
    if (cfg.seq_len < 2) fail("synthetic data needs seq-len >= 2");
    if (cfg.vocab < 4) fail("synthetic data needs vocab >= 4");
    if (src.task == SynthTask::keyword_count && cfg.classes != 2) fail("keyword_count is binary");
    if (!cfg.embeddings.empty()) fail("frozen embeddings need tsv data");
  } else if (cfg.vocab < 3) {
    fail("vocab must be >= 3");
  }
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& key : config_keys()) out += key + " = " + get_config_value(cfg, key) + "\n";
  return out;
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    set_config_value(base, trim(body.substr(0, eq)), body.substr(eq + 1));
  }
  return base;
}

ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

DataSource parse_data_source(std::string_view spec) {
  DataSource src;
  if (spec.starts_with("synth:")) {
    src.synthetic = true;
    src.task = parse_synth_task(spec.substr(6));
  } else if (spec.starts_with("tsv:") && spec.size() > 4) {
    src.synthetic = false;
    src.path = std::string(spec.substr(4));
  } else {
    throw std::invalid_argument("data source must be synth:<kind> or tsv:<path>, got '" +
                                std::string(spec) + "'");
  }
  return src;
}

Dataset load_dataset(const ExperimentConfig& cfg, Vocabulary* vocab_out) {
  const DataSource src = parse_data_source(cfg.data);
  Rng rng(cfg.data_seed);
  if (src.synthetic) return synth_generate(src.task, cfg.samples, cfg.seq_len, cfg.vocab, rng, cfg.classes);
  return encode_corpus(load_tsv_corpus(src.path, cfg.classes), cfg.vocab, cfg.seq_len, cfg.classes, rng,
                       vocab_out);
}

Network build_network(const ExperimentConfig& cfg, const Dataset& data, const Vocabulary* vocab) {
  NetworkShape shape;
  shape.variant = cfg.variant;
  shape.act = cfg.activation;
  shape.vocab_size = data.vocab_size;
  shape.embed_dim = cfg.embed;
  shape.hidden = cfg.hidden;
  shape.out_dim = cfg.loss == LossKind::binary_cross_entropy ? 1 : cfg.classes;
  shape.forget_const = cfg.forget;
  shape.bidirectional = cfg.bidirectional;
  Rng rng(cfg.seed);
  Network net = make_network(shape, rng);
  if (!cfg.embeddings.empty()) {
    if (!vocab) throw std::invalid_argument("frozen embeddings need a vocabulary");
    net.embedding = load_frozen_embedding(cfg.embeddings, *vocab);
    if (net.embedding.dim() != cfg.embed) {
      throw std::invalid_argument("embedding file width " + std::to_string(net.embedding.dim()) +
                                  " does not match embed = " + std::to_string(cfg.embed));
    }
  }
  return net;
}

// ---------------------------------------------------------------------------
// Metrics and checkpoints

std::string format_metrics_row(const MetricsRecord& r) {
  return fmt::format("{},{},{},{},{},{:.6f}", r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc,
                     r.seconds);
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw std::runtime_error(path.string() + ": unexpected metrics header");
  }
  std::vector<MetricsRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> f;
    std::string_view rest(line);
    while (true) {
      const auto c = rest.find(',');
      f.push_back(rest.substr(0, c));
      if (c == std::string_view::npos) break;
      rest = rest.substr(c + 1);
    }
    if (f.size() != 6) throw std::runtime_error(path.string() + ": malformed metrics row");
    MetricsRecord r;
    r.epoch = parse_int<std::size_t>("epoch", f[0]);
    r.train_loss = parse_real("train_loss", f[1]);
    r.train_acc = parse_real("train_acc", f[2]);
    r.test_loss = parse_real("test_loss", f[3]);
    r.test_acc = parse_real("test_acc", f[4]);
    r.seconds = parse_real("seconds", f[5]);
    rows.push_back(r);
  }
  return rows;
}

namespace {

constexpr std::string_view kCheckpointMagic = "slimlstm-checkpoint 1";

struct TensorShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 0 marks a vector
  std::size_t size() const { return cols == 0 ? rows : rows * cols; }
};

template <class T>
TensorShape shape_of(std::string_view name, const T& t) {
  if constexpr (requires { t.rows(); }) {
    return {std::string(name), t.rows(), t.cols()};
  } else {
    return {std::string(name), t.size(), 0};
  }
}

void write_le(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

double read_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw std::runtime_error("checkpoint payload truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  validate(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  std::vector<TensorShape> shapes;
  for_each_model_tensor(net, [&](std::string_view name, const auto& t) { shapes.push_back(shape_of(name, t)); });

  std::string header;
  header += std::string(kCheckpointMagic) + "\n";
  header += fmt::format("variant {}\n", to_string(net.cell.variant));
  header += fmt::format("m {}\nn {}\n", net.cell.m, net.cell.n);
  header += fmt::format("activation {}\n", to_string(net.cell.act));
  header += fmt::format("forget {}\n", net.cell.forget_const);
  header += fmt::format("bidirectional {}\n", net.bidirectional() ? 1 : 0);
  header += fmt::format("embedding-trainable {}\n", net.embedding.trainable ? 1 : 0);
  header += fmt::format("tensors {}\n", shapes.size());
  for (const auto& s : shapes) {
    header += s.cols == 0 ? fmt::format("{} {}\n", s.name, s.rows)
                          : fmt::format("{} {} {}\n", s.name, s.rows, s.cols);
  }
  header += "end\n";
  out << header;
  for_each_model_tensor(net, [&](std::string_view, const auto& t) {
    for (const double v : t.values()) write_le(out, v);
  });
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  auto next_line = [&]() {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": truncated checkpoint header");
    return line;
  };
  auto field = [&](std::string_view key) {
    const std::string line = next_line();
    if (!line.starts_with(std::string(key) + " ")) {
      throw std::runtime_error(path.string() + ": expected '" + std::string(key) + "' in header, got '" + line + "'");
    }
    return line.substr(key.size() + 1);
  };
  if (next_line() != kCheckpointMagic) throw std::runtime_error(path.string() + ": not a checkpoint file");
  const CellVariant variant = parse_variant(field("variant"));
  const auto m = parse_int<std::size_t>("m", field("m"));
  const auto n = parse_int<std::size_t>("n", field("n"));
  const Activation act = parse_activation(field("activation"));
  const double forget = parse_real("forget", field("forget"));
  const bool bidirectional = parse_bool("bidirectional", field("bidirectional"));
  const bool trainable = parse_bool("embedding-trainable", field("embedding-trainable"));
  const auto count = parse_int<std::size_t>("tensors", field("tensors"));

  std::vector<TensorShape> listed;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(next_line());
    TensorShape s;
    ls >> s.name >> s.rows;
    if (!(ls >> s.cols)) s.cols = 0;
    listed.push_back(s);
  }
  if (next_line() != "end") throw std::runtime_error(path.string() + ": header missing 'end'");

  auto find = [&](std::string_view name) -> const TensorShape& {
    for (const auto& s : listed) {
      if (s.name == name) return s;
    }
    throw std::runtime_error(path.string() + ": checkpoint lacks tensor " + std::string(name));
  };
  NetworkShape shape;
  shape.variant = variant;
  shape.act = act;
  shape.vocab_size = find("emb.E").rows;
  shape.embed_dim = m;
  shape.hidden = n;
  shape.out_dim = find("out.b_y").rows;
  shape.forget_const = forget;
  shape.bidirectional = bidirectional;
  Rng unused(0);
  Network net = make_network(shape, unused);
  net.embedding.trainable = trainable;

  std::size_t idx = 0;
  for_each_model_tensor(net, [&](std::string_view name, auto& t) {
    const TensorShape expect = shape_of(name, t);
    if (idx >= listed.size() || listed[idx].name != expect.name || listed[idx].rows != expect.rows ||
        listed[idx].cols != expect.cols) {
      throw std::runtime_error(path.string() + ": tensor layout mismatch at " + expect.name);
    }
    ++idx;
    for (auto& v : t.values()) v = read_le(in);
  });
  if (idx != listed.size()) throw std::runtime_error(path.string() + ": unexpected extra tensors");
  return net;
}

// ---------------------------------------------------------------------------
// Train

TrainResult run_experiment(const ExperimentConfig& cfg, const EpochCallback& on_epoch,
                           std::optional<double> stop_at_test_acc) {
  validate(cfg);
  Vocabulary vocab;
  const Dataset data = load_dataset(cfg, &vocab);
  TrainResult result{{}, build_network(cfg, data, &vocab)};
  OptimizerState opt = make_optimizer(cfg.optimizer, cfg.eta);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle(cfg.seed + epoch);
    const MetricsRecord rec = train_epoch(result.network, data, opt, cfg.loss, cfg.batch, shuffle, epoch);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stop_at_test_acc && rec.test_acc >= *stop_at_test_acc) break;
  }
  return result;
}

TrainResult cmd_train(const ExperimentConfig& cfg, std::ostream* log) {
  validate(cfg);
  const std::filesystem::path dir(cfg.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());

  std::ofstream metrics(dir / "metrics.csv", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
  metrics << kMetricsHeader << "\n" << std::flush;
  {
    std::ofstream conf(dir / "config.txt", std::ios::binary | std::ios::trunc);
    if (!conf) throw std::runtime_error("cannot write " + (dir / "config.txt").string());
    conf << serialize_config(cfg);
  }

  TrainResult result = run_experiment(cfg, [&](const MetricsRecord& r) {
    metrics << format_metrics_row(r) << "\n" << std::flush;
    if (log) {
      *log << fmt::format("epoch {:>4}  train_loss {:.4f}  train_acc {:.4f}  test_loss {:.4f}  test_acc {:.4f}  {:.2f}s\n",
                          r.epoch, r.train_loss, r.train_acc, r.test_loss, r.test_acc, r.seconds)
           << std::flush;
    }
  });
  save_checkpoint(dir / "checkpoint.bin", result.network);
  return result;
}

// ---------------------------------------------------------------------------
// Sweep

std::vector<ExperimentConfig> expand_sweep(const SweepSpec& spec) {
  if (spec.etas.empty() || spec.forgets.empty() || spec.hiddens.empty() || spec.variants.empty()) {
    throw std::invalid_argument("sweep lists must all be nonempty");
  }
  std::vector<ExperimentConfig> cells;
  for (const auto variant : spec.variants) {
    for (const auto hidden : spec.hiddens) {
      for (const auto forget : spec.forgets) {
        for (const auto eta : spec.etas) {
          ExperimentConfig c = spec.base;
          c.variant = variant;
          c.hidden = hidden;
          c.forget = forget;
          c.eta = eta;
          c.seed = spec.base.seed + cells.size();
          c.out = (std::filesystem::path(spec.base.out) / fmt::format("cell_{:03}", cells.size())).string();
          cells.push_back(std::move(c));
        }
      }
    }
  }
  return cells;
}

std::string format_summary_row(const SweepCell& c) {
  if (c.error) {
    return fmt::format("{},{},{},{},nan,0,nan", to_string(c.config.variant), c.config.hidden, c.config.eta,
                       c.config.forget);
  }
  return fmt::format("{},{},{},{},{},{},{}", to_string(c.config.variant), c.config.hidden, c.config.eta,
                     c.config.forget, c.best_test_acc, c.best_epoch, c.final_train_acc);
}

std::vector<SweepCell> cmd_sweep(const SweepSpec& spec, std::size_t workers, std::ostream* log) {
  const auto configs = expand_sweep(spec);
  for (const auto& c : configs) validate(c);
  std::filesystem::create_directories(spec.base.out);
  std::ofstream summary(std::filesystem::path(spec.base.out) / "summary.csv", std::ios::trunc);
  if (!summary) throw std::runtime_error("cannot write summary in " + spec.base.out);

  std::vector<SweepCell> cells(configs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;

  auto work = [&]() {
    for (std::size_t k = next++; k < configs.size(); k = next++) {
      SweepCell& cell = cells[k];
      cell.index = k;
      cell.config = configs[k];
      try {
        const TrainResult r = cmd_train(cell.config);
        for (const auto& rec : r.history) {
          if (rec.test_acc > cell.best_test_acc || cell.best_epoch == 0) {
            cell.best_test_acc = rec.test_acc;
            cell.best_epoch = rec.epoch;
          }
        }
        cell.final_train_acc = r.history.back().train_acc;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      if (log) {
        std::lock_guard lock(log_mutex);
        if (cell.error) {
          *log << fmt::format("cell {:>3} FAILED: {}\n", k, *cell.error);
        } else {
          *log << fmt::format("cell {:>3} {} n={} f={} eta={}  best_test_acc {:.4f} @ epoch {}\n", k,
                              to_string(cell.config.variant), cell.config.hidden, cell.config.forget,
                              cell.config.eta, cell.best_test_acc, cell.best_epoch);
        }
        *log << std::flush;
      }
    }
  };

  const std::size_t pool = std::max<std::size_t>(1, std::min(workers, configs.size()));
  if (pool == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < pool; ++i) threads.emplace_back(work);
  }

  summary << kSummaryHeader << "\n";
  for (const auto& c : cells) summary << format_summary_row(c) << "\n";
  return cells;
}

std::string format_sweep_table(const std::vector<SweepCell>& cells) {
  std::vector<double> etas;
  std::vector<std::string> rows;
  std::map<std::pair<std::string, double>, const SweepCell*> at;
  for (const auto& c : cells) {
    if (std::find(etas.begin(), etas.end(), c.config.eta) == etas.end()) etas.push_back(c.config.eta);
    const std::string row =
        fmt::format("{} n={} f={}", to_string(c.config.variant), c.config.hidden, c.config.forget);
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    at[{row, c.config.eta}] = &c;
  }
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.size());
  std::string out = fmt::format("{:<{}}", "best test acc", width);
  for (const double eta : etas) out += fmt::format(" | eta={:<9}", eta);
  out += "\n";
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}", r, width);
    for (const double eta : etas) {
      const auto it = at.find({r, eta});
      if (it == at.end()) {
        out += fmt::format(" | {:<13}", "");
      } else if (it->second->error) {
        out += fmt::format(" | {:<13}", "failed");
      } else {
        out += fmt::format(" | {:<13.4f}", it->second->best_test_acc);
      }
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  if (opts.m == 0 || opts.n == 0 || opts.T == 0 || opts.batch == 0) {
    throw std::invalid_argument("gradcheck dimensions must be >= 1");
  }
  if (opts.m > 8 || opts.n > 8 || opts.T > 5) {
    throw std::invalid_argument("gradcheck is capped at m, n <= 8 and T <= 5");
  }
  if (opts.vocab < 2) throw std::invalid_argument("gradcheck vocab must be >= 2");

  GradcheckReport report;
  for (const auto variant : opts.variants) {
    for (const auto act : opts.activations) {
      for (std::size_t s = 0; s < opts.seeds; ++s) {
        GradcheckCase gc;
        gc.variant = variant;
        gc.activation = act;
        gc.seed = opts.base_seed + s;

        Rng rng(gc.seed);
        NetworkShape shape;
        shape.variant = variant;
        shape.act = act;
        shape.vocab_size = opts.vocab;
        shape.embed_dim = opts.m;
        shape.hidden = opts.n;
        shape.out_dim = opts.loss == LossKind::binary_cross_entropy ? 1 : opts.classes;
        shape.forget_const = opts.forget;
        shape.bidirectional = opts.bidirectional;
        Network net = make_network(shape, rng);
        // Nonzero biases so every bias path is exercised.
        for_each_model_tensor(net, [&](std::string_view name, auto& t) {
          if (name.find(".b_") != std::string_view::npos) {
            for (auto& v : t.values()) v = rng.uniform(-0.5, 0.5);
          }
        });

        SequenceBatch batch;
        batch.T = opts.T;
        for (std::size_t b = 0; b < opts.batch; ++b) {
          std::vector<Token> row(opts.T);
          for (auto& tok : row) tok = static_cast<Token>(rng.below(opts.vocab));
          const int label = static_cast<int>(rng.below(shape.out_dim == 1 ? 2 : shape.out_dim));
          batch.push_back(row, label);
        }

        BatchGradient analytic = bptt_gradients(net, batch, opts.loss);
        if (opts.tamper) opts.tamper(analytic.grads);
        const FiniteDifferenceResult numeric = finite_difference_oracle(
            net, batch, opts.loss, act == Activation::relu ? opts.relu_epsilon : opts.epsilon);
        gc.groups = compare_gradients(analytic.grads, numeric);
        for (const auto& [group, err] : gc.groups) {
          if (err.max_rel_error >= gc.max_rel_error) {
            gc.max_rel_error = err.max_rel_error;
            gc.worst_group = group;
          }
        }
        gc.passed = gc.max_rel_error <= opts.tolerance;
        report.passed = report.passed && gc.passed;
        report.cases.push_back(std::move(gc));
      }
    }
  }
  return report;
}

std::string format_gradcheck(const GradcheckReport& report, double tolerance) {
  struct Agg {
    double worst = 0;
    std::string group;
    std::size_t failures = 0;
    std::size_t cases = 0;
    std::size_t excluded = 0;
  };
  std::vector<std::pair<std::string, Agg>> rows;
  for (const auto& c : report.cases) {
    const std::string key = fmt::format("{} {}", to_string(c.variant), to_string(c.activation));
    auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.first == key; });
    if (it == rows.end()) {
      rows.emplace_back(key, Agg{});
      it = rows.end() - 1;
    }
    Agg& a = it->second;
    ++a.cases;
    if (!c.passed) ++a.failures;
    if (c.max_rel_error >= a.worst) {
      a.worst = c.max_rel_error;
      a.group = c.worst_group;
    }
    for (const auto& [g, e] : c.groups) a.excluded += e.excluded;
  }
  std::string out;
  for (const auto& [key, a] : rows) {
    out += fmt::format("{:<18} seeds {:>3}  max_rel_err {:.3e}  worst {:<10} {}", key, a.cases, a.worst, a.group,
                       a.failures == 0 ? "PASS" : "FAIL");
    if (a.failures) out += fmt::format("  ({} seeds above {:g}, worst group {})", a.failures, tolerance, a.group);
    if (a.excluded) out += fmt::format("  [{} entries skipped near relu kinks]", a.excluded);
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Params and bench

ParamReport cmd_params(CellVariant variant, std::size_t m, std::size_t n, bool bidirectional) {
  return {variant, m, n, bidirectional, param_count(variant, m, n, bidirectional), step_mac_count(variant, m, n)};
}

std::string format_params(const ParamReport& r, bool json_lines) {
  if (json_lines) {
    nlohmann::json j{{"variant", std::string(to_string(r.variant))},
                     {"m", r.m},
                     {"n", r.n},
                     {"bidirectional", r.bidirectional},
                     {"params", r.params},
                     {"step_macs", r.step_macs}};
    return j.dump();
  }
  return fmt::format("{} m={} n={}{}  params {}  step MACs {}", to_string(r.variant), r.m, r.n,
                     r.bidirectional ? " bidirectional" : "", r.params, r.step_macs);
}

BenchResult cmd_bench(const BenchOptions& opts) {
  if (opts.reps < 3) throw std::invalid_argument("bench needs reps >= 3");
  if (opts.T == 0) throw std::invalid_argument("bench needs T >= 1");
  constexpr std::size_t kVocab = 100;
  Rng rng(opts.seed);
  NetworkShape shape;
  shape.variant = opts.variant;
  shape.act = opts.activation;
  shape.vocab_size = kVocab;
  shape.embed_dim = opts.m;
  shape.hidden = opts.n;
  shape.out_dim = 1;
  const Network net = make_network(shape, rng);
  SequenceBatch batch;
  batch.T = opts.T;
  std::vector<Token> row(opts.T);
  for (auto& tok : row) tok = static_cast<Token>(1 + rng.below(kVocab - 1));
  batch.push_back(row, 1);

  using Clock = std::chrono::steady_clock;
  BenchResult r;
  r.variant = opts.variant;
  double sink = bptt_gradients(net, batch, LossKind::binary_cross_entropy).mean_loss;  // warm-up
  for (std::size_t i = 0; i < opts.reps; ++i) {
    const auto t0 = Clock::now();
    sink += bptt_gradients(net, batch, LossKind::binary_cross_entropy).mean_loss;
    r.rep_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
  }
  if (!std::isfinite(sink)) throw std::runtime_error("bench produced a non-finite loss");
  std::vector<double> sorted = r.rep_seconds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  r.median_sequence_seconds = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  r.median_step_seconds = r.median_sequence_seconds / static_cast<double>(opts.T);
  r.epoch_equivalent_seconds = r.median_sequence_seconds * static_cast<double>(opts.epoch_samples);
  r.step_macs = step_mac_count(opts.variant, opts.m, opts.n);
  r.mac_speedup_vs_lstm = static_cast<double>(step_mac_count(CellVariant::lstm, opts.m, opts.n)) /
                          static_cast<double>(r.step_macs);
  return r;
}

std::string format_bench(const BenchResult& r, const BenchOptions& opts, bool json_lines) {
  if (json_lines) {
    nlohmann::json j{{"variant", std::string(to_string(r.variant))},
                     {"m", opts.m},
                     {"n", opts.n},
                     {"T", opts.T},
                     {"reps", opts.reps},
                     {"median_step_seconds", r.median_step_seconds},
                     {"median_sequence_seconds", r.median_sequence_seconds},
                     {"epoch_equivalent_seconds", r.epoch_equivalent_seconds},
                     {"epoch_samples", opts.epoch_samples},
                     {"step_macs", r.step_macs},
                     {"mac_speedup_vs_lstm", r.mac_speedup_vs_lstm}};
    return j.dump();
  }
  return fmt::format(
      "{:<8} m={} n={} T={}  median step {:.3f} us  sequence {:.3f} ms  epoch-equivalent ({} seqs) {:.1f} s  "
      "step MACs {}  MAC speedup vs lstm {:.2f}x",
      to_string(r.variant), opts.m, opts.n, opts.T, r.median_step_seconds * 1e6, r.median_sequence_seconds * 1e3,
      opts.epoch_samples, r.epoch_equivalent_seconds, r.step_macs, r.mac_speedup_vs_lstm);
}

}  // namespace slim
