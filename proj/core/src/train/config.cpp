#include "clpf/train/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace clpf::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || x < 0) {
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || !std::isfinite(x)) {
    throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  }
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) throw std::invalid_argument(key + ": expected a comma-separated list");
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "dataset") dataset = v;
  else if (key == "val_dataset") val_dataset = v;
  else if (key == "test_dataset") test_dataset = v;
  else if (key == "variant") variant = model::variant_name(model::parse_variant(v));
  else if (key == "latent_dim") latent_dim = to_size(key, v);
  else if (key == "context_dim") context_dim = to_size(key, v);
  else if (key == "encoder_hidden") encoder_hidden = to_size(key, v);
  else if (key == "drift_hidden") drift_hidden = to_sizes(key, v);
  else if (key == "diffusion") diffusion = v;
  else if (key == "flow") flow = v;
  else if (key == "flow_blocks") flow_blocks = to_size(key, v);
  else if (key == "flow_hidden") flow_hidden = to_sizes(key, v);
  else if (key == "core_hidden") core_hidden = to_sizes(key, v);
  else if (key == "rk4_steps") rk4_steps = to_size(key, v);
  else if (key == "tie_posterior") tie_posterior = to_bool(key, v);
  else if (key == "normalize") normalize = to_bool(key, v);
  else if (key == "time_scale") time_scale = to_double(key, v);
  else if (key == "lr") lr = to_double(key, v);
  else if (key == "lr_schedule") {
    if (v != "constant" && v != "cosine") {
      throw std::invalid_argument("config: lr_schedule must be constant or cosine, got '" + v + "'");
    }
    lr_schedule = v;
  }
  else if (key == "lr_min") lr_min = to_double(key, v);
  else if (key == "batch_size") batch_size = to_size(key, v);
  else if (key == "epochs") epochs = to_size(key, v);
  else if (key == "k_train") k_train = to_size(key, v);
  else if (key == "k_val") k_val = to_size(key, v);
  else if (key == "k_test") k_test = to_size(key, v);
  else if (key == "em_step") em_step = to_double(key, v);
  else if (key == "clip_norm") clip_norm = to_double(key, v);
  else if (key == "obs_noise") obs_noise = to_double(key, v);
  else if (key == "max_train_sequences") max_train_sequences = to_size(key, v);
  else if (key == "max_val_sequences") max_val_sequences = to_size(key, v);
  else if (key == "seed") seed = to_size(key, v);
  else if (key == "checkpoint") checkpoint = v;
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::parse(std::istream& in, const std::string& source) {
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse(in, path.string());
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "dataset = " << dataset << "\n"
     << "val_dataset = " << val_dataset << "\n"
     << "test_dataset = " << test_dataset << "\n"
     << "variant = " << variant << "\n"
     << "latent_dim = " << latent_dim << "\n"
     << "context_dim = " << context_dim << "\n"
     << "encoder_hidden = " << encoder_hidden << "\n"
     << "drift_hidden = " << join(drift_hidden) << "\n"
     << "diffusion = " << diffusion << "\n"
     << "flow = " << flow << "\n"
     << "flow_blocks = " << flow_blocks << "\n"
     << "flow_hidden = " << join(flow_hidden) << "\n"
     << "core_hidden = " << join(core_hidden) << "\n"
     << "rk4_steps = " << rk4_steps << "\n"
     << "tie_posterior = " << (tie_posterior ? "true" : "false") << "\n"
     << "normalize = " << (normalize ? "true" : "false") << "\n"
     << "time_scale = " << num(time_scale) << "\n"
     << "lr = " << num(lr) << "\n"
     << "lr_schedule = " << lr_schedule << "\n"
     << "lr_min = " << num(lr_min) << "\n"
     << "batch_size = " << batch_size << "\n"
     << "epochs = " << epochs << "\n"
     << "k_train = " << k_train << "\n"
     << "k_val = " << k_val << "\n"
     << "k_test = " << k_test << "\n"
     << "em_step = " << num(em_step) << "\n"
     << "clip_norm = " << num(clip_norm) << "\n"
     << "obs_noise = " << num(obs_noise) << "\n"
     << "max_train_sequences = " << max_train_sequences << "\n"
     << "max_val_sequences = " << max_val_sequences << "\n"
     << "seed = " << seed << "\n"
     << "checkpoint = " << checkpoint << "\n";
  return os.str();
}

void TrainConfig::validate() const {
  if (dataset.empty()) throw std::invalid_argument("config: dataset is required");
  if (latent_dim == 0) throw std::invalid_argument("config: latent_dim must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
  if (lr_min < 0.0 || lr_min > lr) throw std::invalid_argument("config: need 0 <= lr_min <= lr");
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be positive");
  if (k_train == 0) throw std::invalid_argument("config: k_train must be positive");
  if (k_val < k_train || k_test < k_val) {
    throw std::invalid_argument("config: need k_test >= k_val >= k_train");
  }
  if (!(em_step > 0.0)) throw std::invalid_argument("config: em_step must be positive");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("config: clip_norm must be positive");
  if (obs_noise < 0.0) throw std::invalid_argument("config: obs_noise must be non-negative");
  if (time_scale < 0.0) throw std::invalid_argument("config: time_scale must be non-negative");
  if (checkpoint.empty()) throw std::invalid_argument("config: checkpoint path is required");
  model::parse_variant(variant);
}

model::ModelConfig make_model_config(const TrainConfig& cfg, const DatasetFile& train) {
  cfg.validate();
  if (train.series.empty()) throw std::invalid_argument("training dataset has no sequences");
  model::ModelConfig m;
  m.variant = model::parse_variant(cfg.variant);
  m.data_dim = train.dim();
  m.latent_dim = cfg.latent_dim;
  m.context_dim = cfg.context_dim;
  m.encoder_hidden = cfg.encoder_hidden;
  m.drift_hidden = cfg.drift_hidden;
  m.diffusion_hidden = cfg.drift_hidden;
  m.decoder_hidden = cfg.flow_hidden;
  m.diffusion = cfg.diffusion;
  m.em_step = cfg.em_step;
  m.tie_posterior = cfg.tie_posterior;

  double horizon = 0.0;
  if (train.header.contains("T")) horizon = train.header["T"].get<double>();
  for (const auto& s : train.series) horizon = std::max(horizon, s.grid.horizon());
  m.time_scale = cfg.time_scale > 0.0 ? cfg.time_scale : 1.0 / horizon;

  const std::size_t d = train.dim();
  m.data_shift.assign(d, 0.0);
  m.data_scale.assign(d, 1.0);
  if (cfg.normalize) {
    std::vector<double> sum(d, 0.0), sum2(d, 0.0);
    double n = 0.0;
    for (const auto& s : train.series) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t k = 0; k < d; ++k) sum[k] += s.values(i, k);
      }
      n += static_cast<double>(s.size());
    }
    for (std::size_t k = 0; k < d; ++k) m.data_shift[k] = sum[k] / n;
    for (const auto& s : train.series) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t k = 0; k < d; ++k) {
          const double r = s.values(i, k) - m.data_shift[k];
          sum2[k] += r * r;
        }
      }
    }
    for (std::size_t k = 0; k < d; ++k) {
      const double sd = std::sqrt(sum2[k] / n);
      m.data_scale[k] = sd > 1e-12 ? sd : 1.0;
    }
  }

  m.flow.type = cfg.flow;
  m.flow.dim = d;
  m.flow.context_dim = cfg.latent_dim;
  m.flow.blocks = cfg.flow_blocks;
  m.flow.hidden = cfg.flow_hidden;
  m.flow.core_hidden = cfg.core_hidden;
  m.flow.rk4_steps = cfg.rk4_steps;
  m.flow.time_scale = m.time_scale;
  m.flow.validate();
  m.validate();
  return m;
}

}  // namespace clpf::train
