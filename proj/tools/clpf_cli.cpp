// clpf: generate, train, evaluate, sample, predict, ablate, ingest.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "clpf/model/model.hpp"
#include "clpf/processes/datasets.hpp"
#include "clpf/processes/ingest.hpp"
#include "clpf/train/config.hpp"
#include "clpf/train/train.hpp"

namespace fs = std::filesystem;
using namespace clpf;

namespace {

/// Paths written by the running command; removed unless the command commits.
class Outputs {
 public:
  ~Outputs() {
    if (committed_) return;
    for (const auto& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  const fs::path& add(fs::path p) {
    paths_.push_back(std::move(p));
    return paths_.back();
  }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> paths_;
  bool committed_ = false;
};

void echo(const std::string& command, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::cout << "# clpf " << command << "\n";
  for (const auto& [k, v] : kv) std::cout << "#   " << k << " = " << v << "\n";
  std::cout << std::flush;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::pair<std::string, std::string> split_kv(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("expected key=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<TimeSeries> truncate(std::vector<TimeSeries> v, std::size_t max) {
  if (max > 0 && v.size() > max) v.resize(max);
  return v;
}

void write_plot_csv(const fs::path& path, const TimeSeries& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "t";
  for (std::size_t j = 0; j < s.dim(); ++j) out << ",x" << j + 1;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g", s.time(i));
    out << buf;
    for (std::size_t j = 0; j < s.dim(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.10g", s.values(i, j));
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string process;
  double lambda = 2.0;
  double horizon = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double fine_step = 1e-4;
  std::vector<std::string> params;
  std::string out;
};

Json parse_param_value(const std::string& v) {
  try {
    return Json::parse(v);
  } catch (const Json::parse_error&) {
    return v;
  }
}

int run_generate(const GenerateArgs& a) {
  DatasetSpec spec;
  spec.process = a.process;
  const ProcessKind kind = parse_process(a.process);
  spec.n_sequences = a.n;
  spec.lambda = a.lambda;
  spec.horizon = a.horizon > 0.0 ? a.horizon : default_horizon(kind);
  spec.seed = a.seed;
  spec.fine_step = a.fine_step;
  spec.params = default_process_params(kind);
  for (const auto& p : a.params) {
    const auto [k, v] = split_kv(p);
    if (!spec.params.contains(k)) throw std::invalid_argument("unknown parameter for " + a.process + ": " + k);
    spec.params[k] = parse_param_value(v);
  }
  echo("generate", {{"process", process_name(kind)},
                    {"lambda", fmt(spec.lambda)},
                    {"horizon", fmt(spec.horizon)},
                    {"n", std::to_string(spec.n_sequences)},
                    {"seed", std::to_string(spec.seed)},
                    {"fine_step", fmt(spec.fine_step)},
                    {"params", spec.params.dump()},
                    {"out", a.out}});
  Outputs outputs;
  const DatasetFile data = generate_dataset(spec);
  save_dataset(outputs.add(a.out), data);
  const DatasetFile check = load_dataset(a.out);
  if (check.series.size() != data.series.size()) throw std::runtime_error("dataset did not round-trip");
  outputs.commit();
  std::cout << "sequences " << data.series.size() << " dim " << data.dim() << " mean_length "
            << fmt(static_cast<double>(data.total_observations()) /
                   static_cast<double>(data.series.size()))
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct ConfigArgs {
  std::string config;
  std::vector<std::string> sets;
};

train::TrainConfig resolve_config(const ConfigArgs& a,
                                  const std::vector<std::pair<std::string, std::string>>& shortcuts) {
  train::TrainConfig cfg = a.config.empty() ? train::TrainConfig{} : train::TrainConfig::load(a.config);
  for (const auto& [k, v] : shortcuts) cfg.set(k, v);
  for (const auto& s : a.sets) {
    const auto [k, v] = split_kv(s);
    cfg.set(k, v);
  }
  cfg.validate();
  return cfg;
}

void echo_config(const std::string& command, const train::TrainConfig& cfg,
                 std::vector<std::pair<std::string, std::string>> extra = {}) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::istringstream lines(cfg.to_text());
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(' ');
      const auto e = s.find_last_not_of(' ');
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (auto& e : extra) kv.push_back(std::move(e));
  echo(command, kv);
}

int run_train(const ConfigArgs& a, const std::vector<std::pair<std::string, std::string>>& shortcuts) {
  const train::TrainConfig cfg = resolve_config(a, shortcuts);
  echo_config("train", cfg);
  Outputs outputs;
  outputs.add(cfg.checkpoint);
  const fs::path curve_path = outputs.add(cfg.checkpoint + ".curve.csv");
  const train::TrainResult r = train::train(cfg, &std::cout);
  std::ofstream curve(curve_path);
  curve << "epoch,train_loss,val_nll,seconds\n";
  for (const auto& e : r.curve) {
    curve << e.epoch << "," << fmt(e.train_loss) << "," << fmt(e.val_nll) << "," << fmt(e.seconds)
          << "\n";
  }
  curve.close();
  if (!curve) throw std::runtime_error("write failed: " + curve_path.string());
  model::load_model(cfg.checkpoint);
  outputs.commit();
  std::cout << "checkpoint " << r.checkpoint << " best_epoch " << r.best_epoch << " best_val_nll "
            << fmt(r.best_val_nll) << " initial_val_nll " << fmt(r.initial_val_nll) << " steps "
            << r.steps << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string checkpoint;
  std::string dataset;
  std::size_t k = 125;
  std::uint64_t seed = 0;
  std::size_t max_sequences = 0;
  std::string csv;
  std::string name;
};

int run_evaluate(const EvaluateArgs& a) {
  const std::string name = a.name.empty() ? fs::path(a.dataset).stem().string() : a.name;
  echo("evaluate", {{"checkpoint", a.checkpoint},
                    {"dataset", a.dataset},
                    {"k", std::to_string(a.k)},
                    {"seed", std::to_string(a.seed)},
                    {"max_sequences", std::to_string(a.max_sequences)},
                    {"csv", a.csv},
                    {"name", name}});
  if (a.k == 0) throw std::invalid_argument("--k must be positive");
  const model::ClpfModel m = model::load_model(a.checkpoint);
  DatasetFile data = load_dataset(a.dataset);
  data.series = truncate(std::move(data.series), a.max_sequences);
  const train::EvalResult r = train::evaluate_nll(m, data.series, a.k, a.seed);
  const std::string variant = model::variant_name(m.config().variant);
  std::cout << "variant " << variant << " sequences " << data.series.size() << " nll " << fmt(r.nll)
            << " se " << fmt(r.se) << " clip_rate " << fmt(r.clip_rate) << " seconds "
            << fmt(r.wall_clock_s) << "\n";
  if (data.header.value("process", std::string()) == "gbm") {
    const double oracle = train::gbm_oracle_nll(data);
    std::cout << "oracle_nll " << fmt(oracle) << " gap " << fmt(r.nll - oracle) << "\n";
  }
  if (!a.csv.empty()) {
    Outputs outputs;
    outputs.add(a.csv);
    train::MetricsTable table;
    table.add({name, variant, a.seed, r.nll, r.se, r.wall_clock_s, r.clip_rate});
    table.write_csv(fs::path(a.csv));
    outputs.commit();
  }
  return 0;
}

// ---------------------------------------------------------------- sample

struct SampleArgs {
  std::string checkpoint;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double dense_step = 0.0;
  double horizon = 30.0;
  std::string out;
  std::string plot;
};

int run_sample(const SampleArgs& a) {
  if ((a.lambda > 0.0) == (a.dense_step > 0.0)) {
    throw std::invalid_argument("give exactly one of --lambda or --dense-step");
  }
  if (!(a.horizon > 0.0)) throw std::invalid_argument("--horizon must be positive");
  if (a.n == 0) throw std::invalid_argument("--n must be positive");
  const fs::path plot_base =
      a.plot.empty() ? fs::path(a.out).replace_extension("") : fs::path(a.plot).replace_extension("");
  echo("sample", {{"checkpoint", a.checkpoint},
                  {"n", std::to_string(a.n)},
                  {"seed", std::to_string(a.seed)},
                  {"lambda", fmt(a.lambda)},
                  {"dense_step", fmt(a.dense_step)},
                  {"horizon", fmt(a.horizon)},
                  {"out", a.out},
                  {"plot", plot_base.string() + (a.n > 1 ? "_<i>.csv" : ".csv")}});
  const model::ClpfModel m = model::load_model(a.checkpoint);
  Outputs outputs;
  DatasetFile data;
  const Rng root(a.seed);
  for (std::size_t i = 0; i < a.n; ++i) {
    TimeGrid grid;
    if (a.dense_step > 0.0) {
      const auto count = static_cast<std::size_t>(std::llround(a.horizon / a.dense_step));
      if (count == 0) throw std::invalid_argument("--dense-step exceeds --horizon");
      std::vector<double> times(count);
      for (std::size_t j = 0; j < count; ++j) times[j] = static_cast<double>(j + 1) * a.dense_step;
      times.back() = std::min(times.back(), a.horizon);
      grid = TimeGrid(std::move(times), a.horizon);
    } else {
      Rng grid_rng = root.split(2 * i);
      grid = sample_poisson_grid(a.lambda, a.horizon, grid_rng);
    }
    const std::uint64_t key = Rng::splitmix64(root.split(2 * i + 1).seed());
    data.series.push_back(model::sample_trajectory(m, grid, key));
  }
  Json params;
  params["checkpoint"] = a.checkpoint;
  params["dense_step"] = a.dense_step;
  data.header = make_header("model_sample", params, a.lambda, a.horizon, a.seed,
                            data.series.front().dim(), data.series.size());
  save_dataset(outputs.add(a.out), data);
  for (std::size_t i = 0; i < a.n; ++i) {
    fs::path p = plot_base;
    p += a.n > 1 ? "_" + std::to_string(i) + ".csv" : std::string(".csv");
    write_plot_csv(outputs.add(p), data.series[i]);
  }
  load_dataset(a.out);
  outputs.commit();
  std::cout << "trajectories " << a.n << " points " << data.total_observations() << "\n";
  return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  std::string checkpoint;
  std::string dataset;
  std::size_t samples = 125;
  std::uint64_t seed = 0;
  std::size_t max_sequences = 0;
  std::string out;
};

int run_predict(const PredictArgs& a) {
  echo("predict", {{"checkpoint", a.checkpoint},
                   {"dataset", a.dataset},
                   {"samples", std::to_string(a.samples)},
                   {"seed", std::to_string(a.seed)},
                   {"max_sequences", std::to_string(a.max_sequences)},
                   {"out", a.out}});
  if (a.samples == 0) throw std::invalid_argument("--samples must be positive");
  const model::ClpfModel m = model::load_model(a.checkpoint);
  DatasetFile data = load_dataset(a.dataset);
  data.series = truncate(std::move(data.series), a.max_sequences);
  std::vector<train::Prediction> preds(data.series.size());
  const Rng root(a.seed);
  train::parallel_for(data.series.size(), train::thread_count(), [&](std::size_t i) {
    Rng rng = root.split(i);
    preds[i] = train::sequential_predict(m, data.series[i], a.samples, rng);
  });
  std::vector<double> all;
  Outputs outputs;
  std::ofstream out;
  if (!a.out.empty()) {
    out.open(outputs.add(a.out));
    if (!out) throw std::runtime_error("cannot write " + a.out);
    out << "sequence,index,t,l2";
    for (std::size_t j = 0; j < data.dim(); ++j) out << ",pred" << j + 1;
    for (std::size_t j = 0; j < data.dim(); ++j) out << ",true" << j + 1;
    out << "\n";
  }
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto& p = preds[s];
    const auto& series = data.series[s];
    all.insert(all.end(), p.l2.begin(), p.l2.end());
    if (!out.is_open()) continue;
    for (std::size_t i = 0; i < p.l2.size(); ++i) {
      out << s << "," << i + 1 << "," << fmt(series.time(i + 1)) << "," << fmt(p.l2[i]);
      for (std::size_t j = 0; j < series.dim(); ++j) out << "," << fmt(p.mean(i, j));
      for (std::size_t j = 0; j < series.dim(); ++j) out << "," << fmt(series.values(i + 1, j));
      out << "\n";
    }
  }
  if (out.is_open()) {
    out.close();
    if (!out) throw std::runtime_error("write failed: " + a.out);
  }
  const train::PredictionSummary sum = train::summarize_l2(all);
  outputs.commit();
  std::cout << "predictions " << sum.count << " mean_l2 " << fmt(sum.mean_l2) << " p25 "
            << fmt(sum.p25) << " p75 " << fmt(sum.p75) << "\n";
  return 0;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  ConfigArgs config;
  std::vector<std::string> datasets;
  std::string variants = "CLPF,CLPF-Global,CLPF-Independent,CLPF-Wiener,CTFP,LatentSDE";
  std::string seeds = "0,1,2";
  std::string out_dir = "ablation";
  std::string csv;
};

int run_ablate(const AblateArgs& a) {
  train::AblationSpec spec;
  spec.base = resolve_config(a.config, {});
  for (const auto& d : a.datasets) {
    const auto parts = split_list(d, ':');
    if (parts.size() < 3 || parts.size() > 4) {
      throw std::invalid_argument("--dataset expects name:train:val[:test], got '" + d + "'");
    }
    spec.datasets.push_back({parts[0], parts[1], parts[2], parts.size() == 4 ? parts[3] : parts[2]});
  }
  spec.variants.clear();
  for (const auto& v : split_list(a.variants, ',')) {
    spec.variants.push_back(model::variant_name(model::parse_variant(v)));
  }
  spec.seeds.clear();
  for (const auto& s : split_list(a.seeds, ',')) spec.seeds.push_back(std::stoull(s));
  if (spec.datasets.empty() || spec.variants.empty() || spec.seeds.empty()) {
    throw std::invalid_argument("ablate needs at least one dataset, variant and seed");
  }
  spec.out_dir = a.out_dir;
  std::string dl;
  for (const auto& d : a.datasets) dl += (dl.empty() ? "" : " ") + d;
  echo_config("ablate", spec.base,
              {{"datasets", dl}, {"variants", a.variants}, {"seeds", a.seeds},
               {"out_dir", a.out_dir}, {"csv", a.csv}});
  fs::create_directories(spec.out_dir);
  Outputs outputs;
  for (const auto& d : spec.datasets) {
    for (const auto& v : spec.variants) {
      for (auto s : spec.seeds) {
        outputs.add(fs::path(spec.out_dir) / (d.name + "_" + v + "_" + std::to_string(s) + ".ckpt"));
      }
    }
  }
  const train::MetricsTable table = train::run_ablation(spec, &std::cout);
  if (!a.csv.empty()) table.write_csv(fs::path(outputs.add(a.csv)));
  outputs.commit();
  table.print(std::cout);
  return 0;
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string input;
  double length = 30.0;
  double lambda = 2.0;
  std::uint64_t seed = 0;
  std::size_t id_column = 0;
  bool no_header = false;
  std::size_t pad_length = 0;
  double shift = 0.2;
  std::string out;
};

int run_ingest(const IngestArgs& a) {
  if (a.length != 30.0 && a.length != 120.0) throw std::invalid_argument("--length must be 30 or 120");
  echo("ingest", {{"input", a.input},
                  {"length", fmt(a.length)},
                  {"lambda", fmt(a.lambda)},
                  {"seed", std::to_string(a.seed)},
                  {"id_column", std::to_string(a.id_column)},
                  {"header", a.no_header ? "false" : "true"},
                  {"pad_length", std::to_string(a.pad_length)},
                  {"shift", fmt(a.shift)},
                  {"out", a.out}});
  const IndexedTable table = read_indexed_csv(a.input, a.id_column, !a.no_header);
  IngestOptions opts;
  opts.length = a.length;
  opts.lambda = a.lambda;
  opts.seed = a.seed;
  opts.shift = a.shift;
  opts.pad_length = a.pad_length;
  const DatasetFile data = ingest_table(table, opts);
  Outputs outputs;
  save_dataset(outputs.add(a.out), data);
  load_dataset(a.out);
  outputs.commit();
  std::cout << "sequences " << data.series.size() << " dim " << data.dim() << " pad_length "
            << data.header["params"]["pad_length"].get<std::size_t>() << " mean_length "
            << fmt(static_cast<double>(data.total_observations()) /
                   static_cast<double>(data.series.size()))
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous latent process flows"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Simulate a synthetic dataset");
  g->add_option("--process", gen.process, "gbm | lsde | car | slc")->required();
  g->add_option("--lambda", gen.lambda, "Poisson intensity")->capture_default_str();
  g->add_option("--horizon", gen.horizon, "Horizon T (default: 30, or 2 for slc)");
  g->add_option("--n", gen.n, "Number of sequences")->required();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--fine-step", gen.fine_step, "Euler-Maruyama step")->capture_default_str();
  g->add_option("--param", gen.params, "Process parameter override key=value");
  g->add_option("--out", gen.out)->required();

  ConfigArgs tcfg;
  std::string t_dataset, t_val, t_variant, t_checkpoint, t_epochs, t_seed;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tcfg.config, "key=value config file");
  t->add_option("--set", tcfg.sets, "Config override key=value");
  t->add_option("--dataset", t_dataset);
  t->add_option("--val", t_val);
  t->add_option("--variant", t_variant);
  t->add_option("--epochs", t_epochs);
  t->add_option("--seed", t_seed);
  t->add_option("--checkpoint", t_checkpoint);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "IWAE negative log-likelihood per observation");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--dataset", ev.dataset)->required();
  e->add_option("--k", ev.k, "Importance samples")->capture_default_str();
  e->add_option("--seed", ev.seed)->capture_default_str();
  e->add_option("--max-sequences", ev.max_sequences, "0: all")->capture_default_str();
  e->add_option("--csv", ev.csv, "Write a metrics row");
  e->add_option("--name", ev.name, "Dataset label (default: file stem)");

  SampleArgs sa;
  auto* s = app.add_subcommand("sample", "Draw trajectories from a model");
  s->add_option("--checkpoint", sa.checkpoint)->required();
  s->add_option("--n", sa.n)->capture_default_str();
  s->add_option("--seed", sa.seed)->capture_default_str();
  s->add_option("--lambda", sa.lambda, "Random Poisson grid");
  s->add_option("--dense-step", sa.dense_step, "Regular grid step");
  s->add_option("--horizon", sa.horizon)->capture_default_str();
  s->add_option("--out", sa.out, "JSONL output")->required();
  s->add_option("--plot", sa.plot, "Plot CSV path (default: --out with .csv)");

  PredictArgs pa;
  auto* p = app.add_subcommand("predict", "Sequential one-step prediction");
  p->add_option("--checkpoint", pa.checkpoint)->required();
  p->add_option("--dataset", pa.dataset)->required();
  p->add_option("--samples", pa.samples)->capture_default_str();
  p->add_option("--seed", pa.seed)->capture_default_str();
  p->add_option("--max-sequences", pa.max_sequences, "0: all")->capture_default_str();
  p->add_option("--out", pa.out, "Per-prediction CSV");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train and evaluate variants over seeds");
  a->add_option("--config", ab.config.config);
  a->add_option("--set", ab.config.sets);
  a->add_option("--dataset", ab.datasets, "name:train:val[:test]")->required();
  a->add_option("--variants", ab.variants, "Comma-separated")->capture_default_str();
  a->add_option("--seeds", ab.seeds, "Comma-separated")->capture_default_str();
  a->add_option("--out-dir", ab.out_dir)->capture_default_str();
  a->add_option("--csv", ab.csv);

  IngestArgs in;
  auto* i = app.add_subcommand("ingest", "Resample a regularly indexed CSV");
  i->add_option("--input", in.input)->required();
  i->add_option("--length", in.length, "30 or 120")->capture_default_str();
  i->add_option("--lambda", in.lambda)->capture_default_str();
  i->add_option("--seed", in.seed)->capture_default_str();
  i->add_option("--id-column", in.id_column, "0-based")->capture_default_str();
  i->add_flag("--no-header", in.no_header);
  i->add_option("--pad-length", in.pad_length, "0: longest sequence")->capture_default_str();
  i->add_option("--shift", in.shift)->capture_default_str();
  i->add_option("--out", in.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) {
      std::vector<std::pair<std::string, std::string>> sc;
      if (!t_dataset.empty()) sc.emplace_back("dataset", t_dataset);
      if (!t_val.empty()) sc.emplace_back("val_dataset", t_val);
      if (!t_variant.empty()) sc.emplace_back("variant", t_variant);
      if (!t_epochs.empty()) sc.emplace_back("epochs", t_epochs);
      if (!t_seed.empty()) sc.emplace_back("seed", t_seed);
      if (!t_checkpoint.empty()) sc.emplace_back("checkpoint", t_checkpoint);
      return run_train(tcfg, sc);
    }
    if (*e) return run_evaluate(ev);
    if (*s) return run_sample(sa);
    if (*p) return run_predict(pa);
    if (*a) return run_ablate(ab);
    if (*i) return run_ingest(in);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}
