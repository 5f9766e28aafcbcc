#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "clpf/model/model.hpp"
#include "clpf/processes/datasets.hpp"

namespace clpf::train {

/// Flat key=value training configuration. Unknown keys are rejected.
struct TrainConfig {
  std::string dataset;
  std::string val_dataset;
  std::string test_dataset;
  std::string variant = "CLPF";
  std::size_t latent_dim = 2;
  std::size_t context_dim = 16;
  std::size_t encoder_hidden = 16;
  std::vector<std::size_t> drift_hidden = {32, 32};
  std::string diffusion = "mlp";
  std::string flow = "affine";
  std::size_t flow_blocks = 3;
  std::vector<std::size_t> flow_hidden = {32, 32};
  std::vector<std::size_t> core_hidden = {16, 16};
  std::size_t rk4_steps = 8;
  bool tie_posterior = false;
  /// Standardise observations with the training mean and standard deviation.
  bool normalize = true;
  /// 0 selects 1 / horizon of the training data.
  double time_scale = 0.0;
  double lr = 1e-3;
  /// constant, or cosine annealing from lr to lr_min over all training steps.
  std::string lr_schedule = "constant";
  double lr_min = 0.0;
  std::size_t batch_size = 25;
  std::size_t epochs = 10;
  std::size_t k_train = 3;
  std::size_t k_val = 25;
  std::size_t k_test = 125;
  double em_step = 0.01;
  double clip_norm = 10.0;
  /// Gaussian noise added to training observations (real-data runs use 1e-3).
  double obs_noise = 0.0;
  /// 0 uses every sequence.
  std::size_t max_train_sequences = 0;
  std::size_t max_val_sequences = 0;
  std::uint64_t seed = 0;
  std::string checkpoint = "clpf.ckpt";

  /// Applies one key=value pair; throws std::invalid_argument on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Reads `key = value` lines; `#` starts a comment.
  static TrainConfig parse(std::istream& in, const std::string& source = "<config>");
  static TrainConfig load(const std::filesystem::path& path);
  /// Every key with its resolved value, one per line, in the parse format.
  std::string to_text() const;
  void validate() const;
};

/// Model wiring for `cfg` with data statistics taken from `train`.
model::ModelConfig make_model_config(const TrainConfig& cfg, const DatasetFile& train);

}  // namespace clpf::train
