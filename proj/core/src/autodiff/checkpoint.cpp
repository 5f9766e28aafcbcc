#include "clpf/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace clpf::ad {

namespace {

constexpr char kMagic[8] = {'C', 'L', 'P', 'F', 'C', 'K', 'P', 'T'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  }
  template <typename T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void values(const Matrix& m) {
    for (double x : m.values()) put(x);
  }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("checkpoint write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open checkpoint: " + path.string());
  }
  template <typename T>
  T get() {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw std::runtime_error("checkpoint truncated");
    return to_little(v);
  }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw std::runtime_error("checkpoint truncated");
    return s;
  }
  void values(Matrix& m) {
    for (double& x : m.values()) x = get<double>();
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::ifstream in_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const std::string& metadata) {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(metadata.size());
  w.bytes(metadata.data(), metadata.size());
  w.put<std::uint64_t>(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.name(i);
    const Matrix& v = store.value(i);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint32_t>(2);
    w.put<std::uint64_t>(v.rows());
    w.put<std::uint64_t>(v.cols());
    w.values(v);
  }
  w.put<std::uint64_t>(store.step());
  for (std::size_t i = 0; i < store.size(); ++i) {
    w.values(store.first_moment(i));
    w.values(store.second_moment(i));
  }
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.metadata = r.bytes(r.get<std::uint64_t>());
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 2) throw std::runtime_error("checkpoint: unsupported rank for " + name);
    std::size_t rows = 1, cols = 1;
    if (rank == 1) {
      cols = r.get<std::uint64_t>();
    } else {
      rows = r.get<std::uint64_t>();
      cols = r.get<std::uint64_t>();
    }
    Matrix v(rows, cols);
    r.values(v);
    ck.store.add(std::move(name), std::move(v));
  }
  ck.store.set_step(r.get<std::uint64_t>());
  for (std::size_t i = 0; i < ck.store.size(); ++i) {
    r.values(ck.store.first_moment(i));
    r.values(ck.store.second_moment(i));
  }
  if (!r.at_end()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

void restore_parameters(ParamStore& dst, const ParamStore& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const std::size_t j = src.index(dst.name(i));
    dst.set(i, src.value(j));
    dst.first_moment(i) = src.first_moment(j);
    dst.second_moment(i) = src.second_moment(j);
  }
  dst.set_step(src.step());
}

}  // namespace clpf::ad
