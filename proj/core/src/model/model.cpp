#include "clpf/model/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "clpf/autodiff/checkpoint.hpp"
#include "clpf/processes/sde.hpp"

namespace clpf::model {

using Json = nlohmann::ordered_json;

namespace {

std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden,
                                std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

Tensor row_of(const Matrix& values, std::size_t i) { return Tensor(Matrix::row(values.row_span(i))); }

Tensor expand_rows(const Tensor& x, std::size_t rows) {
  return x.rows() == rows ? x : ad::broadcast(x, rows, x.cols());
}

constexpr double kLog2Pi = 1.8378770664093453;  // log(2π)
constexpr double kLogVarClamp = 12.0;

}  // namespace

Variant parse_variant(const std::string& tag) {
  std::string key;
  for (char c : tag) {
    if (c == '-' || c == '_' || c == ' ') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (key.size() > 4 && key.rfind("clpf", 0) == 0) key = key.substr(4);
  if (key == "clpf") return Variant::kClpf;
  if (key == "global") return Variant::kGlobal;
  if (key == "independent") return Variant::kIndependent;
  if (key == "wiener") return Variant::kWiener;
  if (key == "ctfp") return Variant::kCtfp;
  if (key == "latentsde") return Variant::kLatentSde;
  throw std::invalid_argument("unknown variant '" + tag +
                              "' (expected CLPF, CLPF-Global, CLPF-Independent, CLPF-Wiener, "
                              "CTFP or LatentSDE)");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kClpf: return "CLPF";
    case Variant::kGlobal: return "CLPF-Global";
    case Variant::kIndependent: return "CLPF-Independent";
    case Variant::kWiener: return "CLPF-Wiener";
    case Variant::kCtfp: return "CTFP";
    case Variant::kLatentSde: return "LatentSDE";
  }
  return "?";
}

// ---------------------------------------------------------------------------

Json ModelConfig::to_json() const {
  Json j;
  j["variant"] = variant_name(variant);
  j["data_dim"] = data_dim;
  j["latent_dim"] = latent_dim;
  j["context_dim"] = context_dim;
  j["encoder_hidden"] = encoder_hidden;
  j["drift_hidden"] = drift_hidden;
  j["diffusion"] = diffusion;
  j["diffusion_hidden"] = diffusion_hidden;
  j["decoder_hidden"] = decoder_hidden;
  j["sigma_min"] = sigma_min;
  j["em_step"] = em_step;
  j["u_clip"] = u_clip;
  j["tie_posterior"] = tie_posterior;
  j["time_scale"] = time_scale;
  j["data_shift"] = data_shift;
  j["data_scale"] = data_scale;
  j["flow"] = flow.to_json();
  return j;
}

ModelConfig ModelConfig::from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "variant") c.variant = parse_variant(value.get<std::string>());
    else if (key == "data_dim") c.data_dim = value.get<std::size_t>();
    else if (key == "latent_dim") c.latent_dim = value.get<std::size_t>();
    else if (key == "context_dim") c.context_dim = value.get<std::size_t>();
    else if (key == "encoder_hidden") c.encoder_hidden = value.get<std::size_t>();
    else if (key == "drift_hidden") c.drift_hidden = value.get<std::vector<std::size_t>>();
    else if (key == "diffusion") c.diffusion = value.get<std::string>();
    else if (key == "diffusion_hidden") c.diffusion_hidden = value.get<std::vector<std::size_t>>();
    else if (key == "decoder_hidden") c.decoder_hidden = value.get<std::vector<std::size_t>>();
    else if (key == "sigma_min") c.sigma_min = value.get<double>();
    else if (key == "em_step") c.em_step = value.get<double>();
    else if (key == "u_clip") c.u_clip = value.get<double>();
    else if (key == "tie_posterior") c.tie_posterior = value.get<bool>();
    else if (key == "time_scale") c.time_scale = value.get<double>();
    else if (key == "data_shift") c.data_shift = value.get<std::vector<double>>();
    else if (key == "data_scale") c.data_scale = value.get<std::vector<double>>();
    else if (key == "flow") c.flow = flows::FlowConfig::from_json(value);
    else throw std::invalid_argument("unknown model config key '" + key + "'");
  }
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (data_dim == 0) throw std::invalid_argument("model: data_dim must be positive");
  if (latent_dim == 0) throw std::invalid_argument("model: latent_dim must be positive");
  if (context_dim == 0 || encoder_hidden == 0) {
    throw std::invalid_argument("model: context_dim and encoder_hidden must be positive");
  }
  if (diffusion != "mlp" && diffusion != "additive") {
    throw std::invalid_argument("model: diffusion must be 'mlp' or 'additive', got '" + diffusion +
                                "'");
  }
  if (!(sigma_min > 0.0)) throw std::invalid_argument("model: sigma_min must be positive");
  if (!(em_step > 0.0)) throw std::invalid_argument("model: em_step must be positive");
  if (!(u_clip > 0.0)) throw std::invalid_argument("model: u_clip must be positive");
  if (!(time_scale > 0.0)) throw std::invalid_argument("model: time_scale must be positive");
  if (!data_shift.empty() && data_shift.size() != data_dim) {
    throw std::invalid_argument("model: data_shift has " + std::to_string(data_shift.size()) +
                                " entries, expected " + std::to_string(data_dim));
  }
  if (!data_scale.empty() && data_scale.size() != data_dim) {
    throw std::invalid_argument("model: data_scale has " + std::to_string(data_scale.size()) +
                                " entries, expected " + std::to_string(data_dim));
  }
  for (double s : data_scale) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("model: data_scale entries must be positive and finite");
    }
  }
}

// ---------------------------------------------------------------------------

ClpfModel::ClpfModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t d = cfg_.data_dim;
  const std::size_t m = cfg_.latent_dim;
  if (cfg_.data_shift.empty()) cfg_.data_shift.assign(d, 0.0);
  if (cfg_.data_scale.empty()) cfg_.data_scale.assign(d, 1.0);
  cfg_.flow.dim = d;
  cfg_.flow.context_dim = m;

  Rng rng(init_seed);
  auto& eng = rng.engine();
  if (cfg_.has_latent()) {
    prior_drift_ = ad::Mlp({widths(m + 1, cfg_.drift_hidden, m)}, store_, "prior.drift", eng);
    if (cfg_.diffusion == "mlp") {
      ad::MlpSpec spec{widths(m + 1, cfg_.diffusion_hidden, m)};
      spec.output = ad::Activation::kSoftplus;
      diffusion_net_ = ad::Mlp(spec, store_, "prior.diffusion", eng);
    } else {
      diffusion_param_ = store_.add("prior.diffusion", Matrix(1, m));
    }
    if (!cfg_.tie_posterior) {
      const std::size_t h = cfg_.encoder_hidden;
      const std::size_t c = cfg_.context_dim;
      encoder_ = ad::Gru({d + m + 3, h}, store_, "encoder.gru", eng);
      context_ = ad::Mlp({{h, c}}, store_, "encoder.context", eng);
      posterior_drift_ =
          ad::Mlp({widths(m + 1 + c + d + 1, cfg_.drift_hidden, m)}, store_, "posterior.drift", eng);
    }
    z0_ = store_.add("z0", Matrix(1, m));
  }
  if (cfg_.has_flow()) {
    flow_ = flows::make_flow(cfg_.flow, store_, "flow", eng);
  } else {
    decoder_ = ad::Mlp({widths(m, cfg_.decoder_hidden, 2 * d)}, store_, "decoder", eng);
  }
}

// ---------------------------------------------------------------------------

ModelPass::ModelPass(const ClpfModel& model, const ParamView& p) : model_(model), p_(p) {
  if (model.flow() != nullptr) flow_ = model.flow()->bind(p_);
}

SolveOptions ModelPass::solve_options() const {
  SolveOptions o;
  o.h = model_.config().em_step;
  o.u_clip = model_.config().u_clip;
  return o;
}

Tensor ModelPass::prior_drift(const Tensor& z, double t) const {
  const double ts = model_.config().time_scale;
  return model_.prior_drift_net().apply(p_, ad::concat({z, Tensor::scalar(t * ts)}));
}

Tensor ModelPass::diffusion(const Tensor& z, double t) const {
  const auto& cfg = model_.config();
  if (cfg.diffusion == "additive") {
    return ad::softplus(p_[model_.diffusion_param()]) + cfg.sigma_min;
  }
  return model_.diffusion_net().apply(p_, ad::concat({z, Tensor::scalar(t * cfg.time_scale)})) +
         cfg.sigma_min;
}

Tensor ModelPass::posterior_drift(const Tensor& z, double t, const Tensor& phi,
                                  const Tensor& x_model, double t_obs) const {
  if (model_.config().tie_posterior) return prior_drift(z, t);
  const double ts = model_.config().time_scale;
  return model_.posterior_drift_net().apply(
      p_, ad::concat({z, Tensor::scalar(t * ts), phi, x_model, Tensor::scalar(t_obs * ts)}));
}

Tensor ModelPass::z0(std::size_t rows) const {
  return ad::broadcast(p_[model_.z0_param()], rows, model_.config().latent_dim);
}

Tensor ModelPass::initial_state(std::size_t rows) const {
  return Tensor::zeros(rows, model_.config().encoder_hidden);
}

ModelPass::Encoded ModelPass::encode_step(const Tensor& state, const Tensor& x,
                                          const Tensor& z_prev, double t, double t_prev) const {
  const auto& cfg = model_.config();
  if (cfg.tie_posterior || !cfg.has_latent()) {
    throw std::logic_error("encode_step: this model has no encoder");
  }
  if (x.cols() != cfg.data_dim || z_prev.cols() != cfg.latent_dim ||
      state.cols() != cfg.encoder_hidden) {
    throw ad::ShapeError("encode_step: expected x with " + std::to_string(cfg.data_dim) +
                         " columns, z with " + std::to_string(cfg.latent_dim) + ", state with " +
                         std::to_string(cfg.encoder_hidden) + "; got " +
                         x.value().shape_string() + ", " + z_prev.value().shape_string() + ", " +
                         state.value().shape_string());
  }
  const double ts = cfg.time_scale;
  const Tensor in = ad::concat({to_model(x), z_prev, Tensor::scalar(t * ts),
                            Tensor::scalar(t_prev * ts), Tensor::scalar((t - t_prev) * ts)});
  const std::size_t rows = std::max(in.rows(), state.rows());
  Tensor h = model_.encoder().step(p_, expand_rows(in, rows), expand_rows(state, rows));
  Tensor ctx = model_.context_net().apply(p_, h);
  return {h, ctx};
}

Tensor ModelPass::to_model(const Tensor& x) const {
  const auto& cfg = model_.config();
  const Tensor shift(Matrix(1, cfg.data_dim, std::vector<double>(cfg.data_shift)));
  Matrix inv(1, cfg.data_dim);
  for (std::size_t k = 0; k < cfg.data_dim; ++k) inv[k] = 1.0 / cfg.data_scale[k];
  return (x - shift) * Tensor(std::move(inv));
}

Tensor ModelPass::from_model(const Tensor& x) const {
  const auto& cfg = model_.config();
  const Tensor shift(Matrix(1, cfg.data_dim, std::vector<double>(cfg.data_shift)));
  const Tensor scale(Matrix(1, cfg.data_dim, std::vector<double>(cfg.data_scale)));
  return x * scale + shift;
}

double ModelPass::scaling_logdet() const {
  double s = 0.0;
  for (double v : model_.config().data_scale) s -= std::log(v);
  return s;
}

Tensor ModelPass::base_logpdf(const Tensor& o, const Tensor& o_prev, double t,
                              double t_prev) const {
  const double d = static_cast<double>(o.cols());
  const bool wiener = model_.config().wiener_base();
  if (!o_prev.defined()) {
    const double var = wiener ? t : 1.0;
    if (!(var > 0.0)) throw std::domain_error("first observation time must be positive");
    return ad::sum_cols(ad::square(o)) * (-0.5 / var) + (-0.5 * d * (kLog2Pi + std::log(var)));
  }
  const double dt = std::max(t - t_prev, kMinTransitionDt);
  const double a = wiener ? 1.0 : std::exp(-dt);
  const double var = wiener ? dt : -std::expm1(-2.0 * dt);
  const Tensor resid = wiener ? o - o_prev : o - o_prev * a;
  return ad::sum_cols(ad::square(resid)) * (-0.5 / var) + (-0.5 * d * (kLog2Pi + std::log(var)));
}

Tensor ModelPass::decoder_loglik(const Tensor& x_model, const Tensor& z) const {
  const std::size_t d = model_.config().data_dim;
  const Tensor out = model_.decoder_net().apply(p_, z);
  const Tensor mu = ad::slice_cols(out, 0, d);
  const Tensor logvar = ad::clamp(ad::slice_cols(out, d, 2 * d), -kLogVarClamp, kLogVarClamp);
  const Tensor quad = ad::square(x_model - mu) * ad::exp(-logvar);
  return ad::sum_cols(quad + logvar) * -0.5 + (-0.5 * static_cast<double>(d) * kLog2Pi);
}

Tensor ModelPass::conditional_loglik(const Tensor& x, const Tensor& x_prev, const Tensor& z,
                                     const Tensor& z_prev, double t, double t_prev) const {
  if (!(t > t_prev)) throw std::invalid_argument("conditional_loglik: t must exceed t_prev");
  const std::size_t rows = z.rows();
  if (!flow_) return decoder_loglik(to_model(x), z) + scaling_logdet();
  const Tensor xm = expand_rows(to_model(x), rows);
  const Tensor xm_prev = expand_rows(to_model(x_prev), rows);
  const auto cur = flow_->inverse(xm, z, Tensor::scalar(t));
  const auto prev = flow_->inverse(xm_prev, z_prev, Tensor::scalar(t_prev));
  return base_logpdf(cur.value, prev.value, t, t_prev) + cur.logdet + scaling_logdet();
}

Tensor ModelPass::first_obs_loglik(const Tensor& x, const Tensor& z, double t) const {
  const std::size_t rows = z.rows();
  if (!flow_) return decoder_loglik(to_model(x), z) + scaling_logdet();
  const auto cur = flow_->inverse(expand_rows(to_model(x), rows), z, Tensor::scalar(t));
  return base_logpdf(cur.value, Tensor(), t, 0.0) + cur.logdet + scaling_logdet();
}

ElboEstimate ModelPass::estimate(const TimeSeries& series, std::size_t k, Rng& rng) const {
  const auto& cfg = model_.config();
  if (series.size() == 0) throw std::invalid_argument("estimate: empty series");
  if (k == 0) throw std::invalid_argument("estimate: sample count must be at least 1");
  if (series.dim() != cfg.data_dim) {
    throw ad::ShapeError("estimate: series has dimension " + std::to_string(series.dim()) +
                         ", model expects " + std::to_string(cfg.data_dim));
  }
  const std::size_t n = series.size();
  const std::size_t m = cfg.latent_dim;
  // Without a latent path every sample is identical.
  const std::size_t rows = cfg.has_latent() ? k : 1;
  const bool encode = cfg.has_latent() && !cfg.tie_posterior;

  const LatentField prior = [this](const Tensor& z, double t) { return prior_drift(z, t); };
  const LatentField diff = [this](const Tensor& z, double t) { return diffusion(z, t); };
  const SolveOptions opts = solve_options();

  Tensor phi_global;
  if (encode && cfg.global_context()) {
    Tensor state = initial_state(1);
    const Tensor z_none = Tensor::zeros(1, m);
    double t_prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const Encoded e = encode_step(state, row_of(series.values, i), z_none, series.time(i), t_prev);
      state = e.state;
      phi_global = e.context;
      t_prev = series.time(i);
    }
  }

  ElboEstimate est;
  est.samples = k;
  Tensor joint = Tensor::zeros(rows, 1);
  Tensor z_prev = cfg.has_latent() ? z0(rows) : Tensor::zeros(rows, m);
  Tensor state = encode ? initial_state(rows) : Tensor();
  Tensor o_prev;
  double t_prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = series.time(i);
    const Tensor x = row_of(series.values, i);
    const Tensor xm = to_model(x);
    Tensor z = z_prev;
    Tensor log_m = Tensor::zeros(rows, 1);
    if (cfg.has_latent()) {
      LatentField post;
      if (encode) {
        Tensor phi;
        if (cfg.global_context()) {
          phi = phi_global;
        } else {
          Encoded e = encode_step(state, x, z_prev, t, t_prev);
          state = e.state;
          phi = e.context;
        }
        est.contexts.push_back(phi.value());
        post = [this, phi, xm, t](const Tensor& zz, double s) {
          return posterior_drift(zz, s, phi, xm, t);
        };
      }
      LatentPath path = solve_posterior_interval(post, prior, diff, z_prev, t_prev, t, rng, opts);
      z = path.endpoint;
      log_m = path.log_weight;
      est.clip_events += path.clip_events;
      est.u_entries += path.u_entries;
    }
    Tensor ll;
    if (flow_) {
      const auto inv = flow_->inverse(expand_rows(xm, rows), z, Tensor::scalar(t));
      ll = base_logpdf(inv.value, o_prev, t, t_prev) + inv.logdet;
      o_prev = inv.value;
    } else {
      ll = decoder_loglik(xm, z);
    }
    ll = ll + scaling_logdet();
    joint = joint + ll + log_m;
    est.loglik.push_back(ll.value());
    est.log_weight.push_back(log_m.value());
    z_prev = z;
    t_prev = t;
  }
  est.joint = joint;
  return est;
}

ElboEstimate ModelPass::elbo(const TimeSeries& series, std::size_t k, Rng& rng) const {
  ElboEstimate est = estimate(series, k, rng);
  est.total = ad::mean(est.joint);
  return est;
}

ElboEstimate ModelPass::iwae(const TimeSeries& series, std::size_t k, Rng& rng) const {
  ElboEstimate est = estimate(series, k, rng);
  est.total = log_mean_exp(est.joint);
  return est;
}

Tensor log_mean_exp(const Tensor& joint) {
  const auto vals = joint.value().values();
  const double mx = *std::max_element(vals.begin(), vals.end());
  const double inv_k = 1.0 / static_cast<double>(vals.size());
  return ad::log(ad::sum(ad::exp(joint - mx)) * inv_k) + mx;
}

// ---------------------------------------------------------------------------

void save_model(const std::filesystem::path& path, const ClpfModel& model, const Json& extra) {
  Json meta;
  meta["model"] = model.config().to_json();
  for (const auto& [key, value] : extra.items()) meta[key] = value;
  ad::save_checkpoint(path, model.params(), meta.dump());
}

ClpfModel load_model(const std::filesystem::path& path) {
  ad::Checkpoint ck = ad::load_checkpoint(path);
  Json meta;
  try {
    meta = Json::parse(ck.metadata);
  } catch (const Json::exception& e) {
    throw std::runtime_error(path.string() + ": checkpoint metadata is not JSON: " + e.what());
  }
  if (!meta.contains("model")) {
    throw std::runtime_error(path.string() + ": checkpoint metadata has no model config");
  }
  ClpfModel model(ModelConfig::from_json(meta["model"]), 0);
  ad::restore_parameters(model.params(), ck.store);
  return model;
}

}  // namespace clpf::model
