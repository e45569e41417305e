#include "rawdeblur/checkpoint.hpp"

#include <set>

#include "rawdeblur/bytes.hpp"
#include "rawdeblur/errors.hpp"

namespace rawdeblur::model {

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

namespace {

constexpr char kMagic[] = "DBRW";
constexpr char kTrailer[] = "TRST";

std::string dims_str(std::span<const std::uint32_t> dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + ")";
}

void write_floats(bytes::Writer& w, const std::vector<float>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (float f : v) w.f32(f);
}

std::vector<float> read_floats(bytes::Reader& r, std::size_t n) {
  if (n > r.remaining() / 4) throw FormatError("checkpoint: value count exceeds remaining data");
  std::vector<float> v(n);
  for (auto& f : v) f = r.f32();
  return v;
}

void encode_training(bytes::Writer& w, const TrainingState& t) {
  w.raw(kTrailer);
  w.u16(kTrainingStateVersion);
  w.u64(t.seed);
  w.u32(t.epoch);
  w.u64(t.step);
  w.f64(t.lr0);
  w.u32(t.epochs_flat);
  w.u32(t.epochs_decay);
  w.u32(t.batch_size);
  w.u32(t.crop_size);
  for (double v : {t.lambda, t.beta1, t.beta2, t.adam_eps, t.bn_momentum, t.bn_eps}) w.f64(v);
  if (t.adam_m.size() != t.adam_v.size()) throw UsageError("checkpoint: Adam moment lists differ in length");
  w.u32(static_cast<std::uint32_t>(t.adam_m.size()));
  for (std::size_t i = 0; i < t.adam_m.size(); ++i) {
    write_floats(w, t.adam_m[i]);
    write_floats(w, t.adam_v[i]);
  }
}

TrainingState decode_training(bytes::Reader& r) {
  if (r.str(4) != kTrailer) throw FormatError("checkpoint: unexpected data after parameters");
  const std::uint16_t version = r.u16();
  if (version != kTrainingStateVersion)
    throw VersionError("checkpoint: training state version " + std::to_string(version) + " is not supported");
  TrainingState t;
  t.seed = r.u64();
  t.epoch = r.u32();
  t.step = r.u64();
  t.lr0 = r.f64();
  t.epochs_flat = r.u32();
  t.epochs_decay = r.u32();
  t.batch_size = r.u32();
  t.crop_size = r.u32();
  for (double* v : {&t.lambda, &t.beta1, &t.beta2, &t.adam_eps, &t.bn_momentum, &t.bn_eps}) *v = r.f64();
  const std::uint32_t n = r.u32();
  if (n > r.remaining() / 8) throw FormatError("checkpoint: moment count exceeds remaining data");
  for (std::uint32_t i = 0; i < n; ++i) {
    t.adam_m.push_back(read_floats(r, r.u32()));
    t.adam_v.push_back(read_floats(r, r.u32()));
  }
  return t;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  bytes::Writer w;
  w.raw(kMagic);
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(ckpt.config.variant));
  w.u16(static_cast<std::uint16_t>(ckpt.config.base_channels));
  w.u8(static_cast<std::uint8_t>(ckpt.config.n_resblocks));
  w.u8(static_cast<std::uint8_t>(ckpt.config.multiplier));
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (e.name.size() > 0xffff || e.dims.size() > 0xff) throw UsageError("checkpoint: entry '" + e.name + "' too large");
    std::size_t numel = 1;
    for (auto d : e.dims) numel *= d;
    if (numel != e.values.size()) throw UsageError("checkpoint: entry '" + e.name + "' dims disagree with values");
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.raw(e.name);
    w.u8(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.u32(d);
    for (float v : e.values) w.f32(v);
  }
  if (ckpt.training) encode_training(w, *ckpt.training);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  if (r.str(4) != kMagic) throw FormatError("checkpoint: bad magic (expected DBRW)");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  Checkpoint ckpt;
  const std::uint8_t variant = r.u8();
  if (variant > 3) throw FormatError("checkpoint: unknown variant code " + std::to_string(variant));
  ckpt.config.variant = static_cast<Variant>(variant);
  ckpt.config.base_channels = r.u16();
  ckpt.config.n_resblocks = r.u8();
  ckpt.config.multiplier = r.u8();
  try {
    ckpt.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(r.u16());
    if (!seen.insert(e.name).second) throw DuplicateParameterError("checkpoint: parameter '" + e.name + "' appears twice");
    const std::uint8_t rank = r.u8();
    std::size_t numel = 1;
    for (int k = 0; k < rank; ++k) {
      e.dims.push_back(r.u32());
      numel *= e.dims.back();
      if (numel > r.remaining()) throw FormatError("checkpoint: entry '" + e.name + "' exceeds remaining data");
    }
    e.values = read_floats(r, numel);
    ckpt.entries.push_back(std::move(e));
  }
  if (!r.at_end()) ckpt.training = decode_training(r);
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after training state");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  bytes::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto data = bytes::read_file(path);
  try {
    return decode_checkpoint(data);
  } catch (const VersionError& e) {
    throw VersionError(path.string() + ": " + e.what());
  } catch (const DuplicateParameterError& e) {
    throw DuplicateParameterError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename T>
Checkpoint snapshot(DeblurNet<T>& net) {
  Checkpoint ckpt;
  ckpt.config = net.config();
  for (const auto& s : net.state()) {
    CheckpointEntry e;
    e.name = s.name;
    for (int d : s.dims) e.dims.push_back(static_cast<std::uint32_t>(d));
    e.values.assign(s.values.begin(), s.values.end());
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

template <typename T>
void restore(DeblurNet<T>& net, const Checkpoint& ckpt) {
  if (!(ckpt.config == net.config()))
    throw ConfigMismatchError("checkpoint holds a " + to_string(ckpt.config.variant) + " net (base " +
                              std::to_string(ckpt.config.base_channels) + ", " +
                              std::to_string(ckpt.config.n_resblocks) + " resblocks, x" +
                              std::to_string(ckpt.config.multiplier) + "), model is " +
                              to_string(net.config().variant) + " (base " + std::to_string(net.config().base_channels) +
                              ", " + std::to_string(net.config().n_resblocks) + " resblocks, x" +
                              std::to_string(net.config().multiplier) + ")");
  auto state = net.state();
  std::set<std::string> known;
  for (const auto& s : state) known.insert(s.name);
  for (const auto& e : ckpt.entries)
    if (!known.count(e.name)) throw MissingParameterError("checkpoint: unexpected parameter '" + e.name + "'");
  for (const auto& s : state) {
    const CheckpointEntry* e = ckpt.find(s.name);
    if (!e) throw MissingParameterError("checkpoint: parameter '" + s.name + "' is missing");
    std::vector<std::uint32_t> want(s.dims.begin(), s.dims.end());
    if (e->dims != want)
      throw ParameterShapeError("checkpoint: parameter '" + s.name + "' has dims " + dims_str(e->dims) +
                                ", model expects " + dims_str(want));
  }
  for (auto& s : state) {
    const CheckpointEntry* e = ckpt.find(s.name);
    for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = static_cast<T>(e->values[i]);
  }
}

template <typename T>
DeblurNet<T> instantiate(const Checkpoint& ckpt) {
  DeblurNet<T> net(ckpt.config);
  restore(net, ckpt);
  return net;
}

#define RAWDEBLUR_INSTANTIATE(T)                                    \
  template Checkpoint snapshot<T>(DeblurNet<T>&);                   \
  template void restore<T>(DeblurNet<T>&, const Checkpoint&);       \
  template DeblurNet<T> instantiate<T>(const Checkpoint&);
RAWDEBLUR_INSTANTIATE(float)
RAWDEBLUR_INSTANTIATE(double)
#undef RAWDEBLUR_INSTANTIATE

}  // namespace rawdeblur::model
