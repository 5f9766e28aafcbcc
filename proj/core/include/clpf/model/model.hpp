#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "clpf/autodiff/nn.hpp"
#include "clpf/flows/flow.hpp"
#include "clpf/model/latent_sde.hpp"
#include "clpf/processes/time_series.hpp"

namespace clpf::model {

using ad::ParamStore;
using ad::ParamView;

enum class Variant {
  kClpf,
  kGlobal,       // one context for the whole sequence
  kIndependent,  // per-timestamp Gaussian decoder instead of the flow
  kWiener,       // Wiener base process instead of OU
  kCtfp,         // no latent SDE, flow indexed by t only, exact likelihood
  kLatentSde,    // Global + Independent
};

Variant parse_variant(const std::string& tag);
const char* variant_name(Variant v);

struct ModelConfig {
  Variant variant = Variant::kClpf;
  std::size_t data_dim = 1;
  std::size_t latent_dim = 2;
  std::size_t context_dim = 16;
  std::size_t encoder_hidden = 16;
  std::vector<std::size_t> drift_hidden = {32, 32};
  /// "mlp": σ(z, t) network; "additive": learned constant vector.
  std::string diffusion = "mlp";
  std::vector<std::size_t> diffusion_hidden = {32, 32};
  std::vector<std::size_t> decoder_hidden = {32, 32};
  double sigma_min = 1e-3;
  double em_step = 0.01;
  double u_clip = 20.0;
  /// Posterior drift is the prior drift (no encoder influence, log M ≡ 0).
  bool tie_posterior = false;
  /// Multiplies t before it enters the drift, diffusion, encoder and decoder nets.
  double time_scale = 1.0;
  /// Observations enter the model as (x − shift) / scale.
  std::vector<double> data_shift;
  std::vector<double> data_scale;
  flows::FlowConfig flow;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::ordered_json& j);
  void validate() const;

  bool has_latent() const { return variant != Variant::kCtfp; }
  bool has_flow() const { return variant != Variant::kIndependent && variant != Variant::kLatentSde; }
  bool global_context() const { return variant == Variant::kGlobal || variant == Variant::kLatentSde; }
  bool wiener_base() const { return variant == Variant::kWiener; }
};

struct ElboEstimate {
  /// ELBO (mean over samples) or IWAE (log-mean-exp over samples), 1 x 1.
  Tensor total;
  /// Per-sample joint terms Σᵢ(loglik + log M), K x 1.
  Tensor joint;
  /// Per-interval values, each K x 1.
  std::vector<Matrix> loglik;
  std::vector<Matrix> log_weight;
  /// Encoder context used for each interval (empty without an encoder).
  std::vector<Matrix> contexts;
  std::size_t samples = 0;
  std::size_t clip_events = 0;
  std::size_t u_entries = 0;
};

/// Network parameters and wiring of one model variant.
class ClpfModel {
 public:
  ClpfModel(ModelConfig cfg, std::uint64_t init_seed);
  ClpfModel(ClpfModel&&) noexcept = default;
  ClpfModel& operator=(ClpfModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  const ad::Mlp& prior_drift_net() const { return prior_drift_; }
  const ad::Mlp& posterior_drift_net() const { return posterior_drift_; }
  const ad::Mlp& diffusion_net() const { return diffusion_net_; }
  std::size_t diffusion_param() const { return diffusion_param_; }
  const ad::Gru& encoder() const { return encoder_; }
  const ad::Mlp& context_net() const { return context_; }
  const ad::Mlp& decoder_net() const { return decoder_; }
  std::size_t z0_param() const { return z0_; }
  const flows::IndexedFlow* flow() const { return flow_.get(); }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  ad::Mlp prior_drift_;
  ad::Mlp posterior_drift_;
  ad::Mlp diffusion_net_;
  std::size_t diffusion_param_ = 0;
  ad::Gru encoder_;
  ad::Mlp context_;
  ad::Mlp decoder_;
  std::size_t z0_ = 0;
  std::unique_ptr<flows::IndexedFlow> flow_;
};

/// A model bound to one parameter view (one tape, or none) for a forward pass.
/// Observations passed to the methods below are in data coordinates.
class ModelPass {
 public:
  ModelPass(const ClpfModel& model, const ParamView& p);

  const ClpfModel& model() const { return model_; }
  const ParamView& view() const { return p_; }

  Tensor prior_drift(const Tensor& z, double t) const;
  /// ≥ sigma_min elementwise.
  Tensor diffusion(const Tensor& z, double t) const;
  Tensor posterior_drift(const Tensor& z, double t, const Tensor& phi, const Tensor& x_model,
                         double t_obs) const;

  /// Learned z₀ repeated over `rows`.
  Tensor z0(std::size_t rows) const;
  Tensor initial_state(std::size_t rows) const;

  struct Encoded {
    Tensor state;
    Tensor context;
  };
  /// GRU over (x_{t_i}, z_{t_{i−1}}, t_i, t_{i−1}, t_i − t_{i−1}), hidden state projected to φᵢ.
  Encoded encode_step(const Tensor& state, const Tensor& x, const Tensor& z_prev, double t,
                      double t_prev) const;

  /// (x − shift) / scale for a rows x d block.
  Tensor to_model(const Tensor& x) const;
  Tensor from_model(const Tensor& x) const;
  /// −Σ log scale: the log-Jacobian of the data scaling per observation.
  double scaling_logdet() const;

  /// log p(x_{t_i} | x_{t_{i−1}}, z_{t_i}, z_{t_{i−1}}), rows x 1.
  Tensor conditional_loglik(const Tensor& x, const Tensor& x_prev, const Tensor& z,
                            const Tensor& z_prev, double t, double t_prev) const;
  /// log p(x_{t_1} | z_{t_1}) with the base at stationarity (N(0, t₁ I) for Wiener).
  Tensor first_obs_loglik(const Tensor& x, const Tensor& z, double t) const;

  /// Base-process density of `o` (model coordinates) given the previous base
  /// state, or the first-observation marginal when `o_prev` is undefined.
  Tensor base_logpdf(const Tensor& o, const Tensor& o_prev, double t, double t_prev) const;

  /// K full-sequence joint samples.
  ElboEstimate estimate(const TimeSeries& series, std::size_t k, Rng& rng) const;
  /// Mean over samples of the joint terms.
  ElboEstimate elbo(const TimeSeries& series, std::size_t k, Rng& rng) const;
  /// Stabilised log-mean-exp over samples of the joint terms.
  ElboEstimate iwae(const TimeSeries& series, std::size_t k, Rng& rng) const;

  const flows::BoundFlow* flow() const { return flow_.get(); }
  SolveOptions solve_options() const;

 private:
  Tensor decoder_loglik(const Tensor& x_model, const Tensor& z) const;

  const ClpfModel& model_;
  ParamView p_;
  std::unique_ptr<flows::BoundFlow> flow_;
};

/// Max-shifted log-mean-exp over the rows of a K x 1 tensor.
Tensor log_mean_exp(const Tensor& joint);

/// Decodes one prior latent path and one base path on `grid`. The latent path
/// lives on the lattice k·h and every random draw is keyed by (seed, lattice
/// index) or (seed, time), so a finer grid reproduces shared timestamps exactly.
TimeSeries sample_trajectory(const ClpfModel& model, const TimeGrid& grid, std::uint64_t seed);

void save_model(const std::filesystem::path& path, const ClpfModel& model,
                const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());
ClpfModel load_model(const std::filesystem::path& path);

}  // namespace clpf::model
