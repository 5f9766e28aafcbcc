#include "clpf/processes/datasets.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "clpf/autodiff/tensor.hpp"

namespace clpf {

ProcessKind parse_process(const std::string& name) {
  if (name == "gbm") return ProcessKind::kGbm;
  if (name == "lsde") return ProcessKind::kLsde;
  if (name == "car") return ProcessKind::kCar;
  if (name == "slc") return ProcessKind::kSlc;
  throw std::invalid_argument("unknown process '" + name + "' (expected gbm, lsde, car or slc)");
}

const char* process_name(ProcessKind kind) {
  switch (kind) {
    case ProcessKind::kGbm: return "gbm";
    case ProcessKind::kLsde: return "lsde";
    case ProcessKind::kCar: return "car";
    case ProcessKind::kSlc: return "slc";
  }
  return "?";
}

Json default_process_params(ProcessKind kind) {
  switch (kind) {
    case ProcessKind::kGbm: return Json{{"mu", 0.2}, {"sigma", 0.1}, {"x0", 1.0}};
    case ProcessKind::kLsde: return Json{{"x0", 0.0}};
    case ProcessKind::kCar:
      return Json{{"a", {0.002, 0.005, -0.003, -0.002}}, {"y0", {0.0, 0.0, 0.0, 0.0}}};
    case ProcessKind::kSlc:
      return Json{{"sigma", 10.0},
                  {"rho", 28.0},
                  {"beta", 8.0 / 3.0},
                  {"alpha", {0.1, 0.28, 0.3}},
                  {"init_sd", 1.0}};
  }
  return Json::object();
}

std::size_t process_dim(ProcessKind kind) { return kind == ProcessKind::kSlc ? 3 : 1; }

double default_horizon(ProcessKind kind) { return kind == ProcessKind::kSlc ? 2.0 : 30.0; }

std::size_t DatasetFile::dim() const { return series.empty() ? 0 : series.front().dim(); }

std::size_t DatasetFile::total_observations() const {
  std::size_t n = 0;
  for (const auto& s : series) n += s.size();
  return n;
}

namespace {

Json merged_params(ProcessKind kind, const Json& overrides) {
  Json p = default_process_params(kind);
  if (!overrides.is_null()) {
    if (!overrides.is_object()) throw std::invalid_argument("process params must be an object");
    for (const auto& [k, v] : overrides.items()) {
      if (!p.contains(k)) {
        throw std::invalid_argument(std::string("unknown parameter '") + k + "' for process " +
                                    process_name(kind));
      }
      p[k] = v;
    }
  }
  return p;
}

std::vector<double> vec(const Json& j, std::size_t n, const char* what) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != n) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(n) + " values");
  }
  return v;
}

}  // namespace

SdeSpec process_sde(ProcessKind kind, const Json& params) {
  SdeSpec s;
  switch (kind) {
    case ProcessKind::kGbm: {
      const double mu = params.at("mu").get<double>(), sig = params.at("sigma").get<double>();
      s.dim = 1;
      s.drift = [mu](std::span<const double> z, double, std::span<double> o) { o[0] = mu * z[0]; };
      s.diffusion = [sig](std::span<const double> z, double, std::span<double> o) {
        o[0] = sig * z[0];
      };
      return s;
    }
    case ProcessKind::kLsde:
      s.dim = 1;
      s.drift = [](std::span<const double> z, double t, std::span<double> o) {
        o[0] = 0.5 * std::sin(t) * z[0] + 0.5 * std::cos(t);
      };
      s.diffusion = [](std::span<const double>, double t, std::span<double> o) {
        o[0] = 0.2 / (1.0 + std::exp(-t));
      };
      return s;
    case ProcessKind::kCar: {
      const auto a = vec(params.at("a"), 4, "car.a");
      s.dim = 4;
      s.drift = [a](std::span<const double> y, double, std::span<double> o) {
        o[0] = y[1];
        o[1] = y[2];
        o[2] = y[3];
        o[3] = a[0] * y[0] + a[1] * y[1] + a[2] * y[2] + a[3] * y[3];
      };
      s.diffusion = [](std::span<const double>, double, std::span<double> o) {
        o[0] = o[1] = o[2] = 0.0;
        o[3] = 1.0;
      };
      return s;
    }
    case ProcessKind::kSlc: {
      const double sg = params.at("sigma").get<double>(), rho = params.at("rho").get<double>(),
                   beta = params.at("beta").get<double>();
      const auto alpha = vec(params.at("alpha"), 3, "slc.alpha");
      s.dim = 3;
      s.drift = [sg, rho, beta](std::span<const double> v, double, std::span<double> o) {
        o[0] = sg * (v[1] - v[0]);
        o[1] = v[0] * (rho - v[2]) - v[1];
        o[2] = v[0] * v[1] - beta * v[2];
      };
      s.diffusion = [alpha](std::span<const double>, double, std::span<double> o) {
        for (std::size_t j = 0; j < 3; ++j) o[j] = alpha[j];
      };
      return s;
    }
  }
  throw std::invalid_argument("process_sde: unknown process");
}

void em_advance(const SdeSpec& sde, std::span<double> z, double t0, double t1, double h, Rng& rng) {
  const std::size_t n = step_count(t0, t1, h);
  const double dt = (t1 - t0) / static_cast<double>(n);
  const double sq = std::sqrt(dt);
  std::vector<double> mu(sde.dim), sig(sde.dim);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    sde.drift(z, t, mu);
    sde.diffusion(z, t, sig);
    for (std::size_t j = 0; j < sde.dim; ++j) {
      z[j] += mu[j] * dt + sig[j] * sq * rng.normal();
      if (!std::isfinite(z[j])) {
        throw ad::NumericError("em_advance: non-finite state at t=" + std::to_string(t));
      }
    }
  }
}

TimeSeries generate_sequence(const DatasetSpec& spec, std::size_t index) {
  const ProcessKind kind = parse_process(spec.process);
  const Json params = merged_params(kind, spec.params);
  Rng rng(spec.seed + index);
  TimeGrid grid = sample_poisson_grid(spec.lambda, spec.horizon, rng);
  const std::size_t d = process_dim(kind);
  Matrix values(grid.size(), d);
  double t_prev = 0.0;
  switch (kind) {
    case ProcessKind::kGbm: {
      const double mu = params.at("mu").get<double>(), sig = params.at("sigma").get<double>();
      double x = params.at("x0").get<double>();
      for (std::size_t i = 0; i < grid.size(); ++i) {
        x = gbm_exact_sample(x, grid[i] - t_prev, mu, sig, rng);
        values(i, 0) = x;
        t_prev = grid[i];
      }
      break;
    }
    case ProcessKind::kLsde:
    case ProcessKind::kCar:
    case ProcessKind::kSlc: {
      const SdeSpec sde = process_sde(kind, params);
      std::vector<double> z(sde.dim);
      if (kind == ProcessKind::kLsde) {
        z[0] = params.at("x0").get<double>();
      } else if (kind == ProcessKind::kCar) {
        z = vec(params.at("y0"), 4, "car.y0");
      } else {
        const double sd = params.at("init_sd").get<double>();
        for (auto& v : z) v = sd * rng.normal();
      }
      for (std::size_t i = 0; i < grid.size(); ++i) {
        em_advance(sde, z, t_prev, grid[i], spec.fine_step, rng);
        for (std::size_t j = 0; j < d; ++j) values(i, j) = z[j];
        t_prev = grid[i];
      }
      break;
    }
  }
  return TimeSeries(std::move(grid), std::move(values));
}

Json make_header(const std::string& process, const Json& params, double lambda, double horizon,
                 std::uint64_t seed, std::size_t dim, std::size_t n_sequences) {
  Json h;
  h["process"] = process;
  h["params"] = params;
  h["lambda"] = lambda;
  h["T"] = horizon;
  h["seed"] = seed;
  h["d"] = dim;
  h["n_sequences"] = n_sequences;
  return h;
}

DatasetFile generate_dataset(const DatasetSpec& spec) {
  const ProcessKind kind = parse_process(spec.process);
  if (spec.n_sequences == 0) throw std::invalid_argument("generate_dataset: n_sequences must be positive");
  if (!(spec.lambda > 0.0) || !(spec.horizon > 0.0) || !(spec.fine_step > 0.0)) {
    throw std::invalid_argument("generate_dataset: λ, T and step must be positive");
  }
  DatasetFile out;
  Json params = merged_params(kind, spec.params);
  out.header = make_header(process_name(kind), params, spec.lambda, spec.horizon, spec.seed,
                           process_dim(kind), spec.n_sequences);
  if (kind != ProcessKind::kGbm) out.header["fine_step"] = spec.fine_step;
  out.series.reserve(spec.n_sequences);
  for (std::size_t i = 0; i < spec.n_sequences; ++i) out.series.push_back(generate_sequence(spec, i));
  return out;
}

void save_dataset(const std::filesystem::path& path, const DatasetFile& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path.string());
  Json header = data.header;
  header["n_sequences"] = data.series.size();
  header["d"] = data.dim();
  out << header.dump() << '\n';
  for (const auto& s : data.series) {
    Json line;
    line["t"] = s.grid.times();
    Json rows = Json::array();
    for (std::size_t i = 0; i < s.size(); ++i) {
      auto r = s.values.row_span(i);
      rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    line["x"] = std::move(rows);
    out << line.dump() << '\n';
  }
  if (!out) throw std::runtime_error("dataset write failed: " + path.string());
}

DatasetFile load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path.string());
  DatasetFile data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (data.header.is_null()) {
      if (!j.contains("process") || !j.contains("T")) {
        throw std::runtime_error(path.string() + ": first line is not a dataset header");
      }
      data.header = std::move(j);
      continue;
    }
    try {
      auto t = j.at("t").get<std::vector<double>>();
      const auto& x = j.at("x");
      if (x.size() != t.size()) throw std::invalid_argument("t/x length mismatch");
      const std::size_t d = x.empty() ? 0 : x[0].size();
      Matrix values(t.size(), d);
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (x[i].size() != d) throw std::invalid_argument("ragged x rows");
        for (std::size_t k = 0; k < d; ++k) values(i, k) = x[i][k].get<double>();
      }
      data.series.emplace_back(TimeGrid(std::move(t), data.header.at("T").get<double>()),
                               std::move(values));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (data.series.back().dim() != data.series.front().dim()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": dimension differs from earlier sequences");
    }
  }
  if (data.header.is_null()) throw std::runtime_error(path.string() + ": empty dataset file");
  return data;
}

}  // namespace clpf
