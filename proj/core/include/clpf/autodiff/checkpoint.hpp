#pragma once

#include <filesystem>
#include <string>

#include "clpf/autodiff/params.hpp"

namespace clpf::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (all integers and floats little-endian):
///   magic "CLPFCKPT", u32 version,
///   u64 metadata length, metadata bytes (free-form, typically JSON),
///   u64 parameter count, per parameter: u32 name length, name bytes,
///     u32 rank, u64 dims[rank], f64 values,
///   u64 Adam step, per parameter: f64 first moment, f64 second moment.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const std::string& metadata);

struct Checkpoint {
  ParamStore store;
  std::string metadata;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies values and moments from `src` into `dst`, matching by name; every
/// parameter of `dst` must be present in `src` with the same shape.
void restore_parameters(ParamStore& dst, const ParamStore& src);

}  // namespace clpf::ad
