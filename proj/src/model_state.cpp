#include "fsvos/model_state.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "fsvos/data.hpp"
#include "fsvos/errors.hpp"

namespace fsvos {

void BackboneConfig::validate() const {
  if (in_channels < 1) throw ConfigError("backbone: in_channels must be >= 1");
  if (widths.empty() || widths.size() != strides.size()) {
    throw ConfigError("backbone: widths and strides must be non-empty and equally long");
  }
  for (int w : widths)
    if (w < 1) throw ConfigError("backbone: stage width must be >= 1");
  for (int s : strides)
    if (s != 1 && s != 2) throw ConfigError("backbone: stage stride must be 1 or 2");
  const int n = static_cast<int>(widths.size());
  if (mid_tap_stage < 0 || high_tap_stage >= n || mid_tap_stage >= high_tap_stage) {
    throw ConfigError("backbone: need 0 <= mid_tap_stage < high_tap_stage < stages");
  }
  for (int s : frozen_stages)
    if (s < 0 || s >= n) throw ConfigError("backbone: frozen stage index out of range");
}

int BackboneConfig::stride_at(int stage) const {
  int total = 1;
  for (int i = 0; i <= stage; ++i) total *= strides.at(static_cast<std::size_t>(i));
  return total;
}

void ModelConfig::validate() const {
  backbone.validate();
  if (temporal_kernel < 1 || temporal_kernel % 2 == 0) {
    throw ConfigError("temporal_kernel must be odd and >= 1");
  }
}

namespace {

const char* neck_name(NeckVariant v) { return v == NeckVariant::kLight ? "light" : "identity"; }
const char* support_mid_name(SupportMidMode m) {
  return m == SupportMidMode::kSpatial ? "spatial" : "masked_pool";
}

}  // namespace

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels},       {"widths", c.widths},
                     {"strides", c.strides},               {"mid_tap_stage", c.mid_tap_stage},
                     {"high_tap_stage", c.high_tap_stage}, {"frozen_stages", c.frozen_stages}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  BackboneConfig d;
  c.in_channels = j.value("in_channels", d.in_channels);
  c.widths = j.value("widths", d.widths);
  c.strides = j.value("strides", d.strides);
  c.mid_tap_stage = j.value("mid_tap_stage", d.mid_tap_stage);
  c.high_tap_stage = j.value("high_tap_stage", d.high_tap_stage);
  c.frozen_stages = j.value("frozen_stages", d.frozen_stages);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone},
                     {"neck", neck_name(c.neck)},
                     {"support_mid", support_mid_name(c.support_mid)},
                     {"temporal_unit", c.temporal_unit},
                     {"temporal_kernel", c.temporal_kernel}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("backbone")) c.backbone = j.at("backbone").get<BackboneConfig>();
  const std::string neck = j.value("neck", std::string("light"));
  if (neck == "light") c.neck = NeckVariant::kLight;
  else if (neck == "identity") c.neck = NeckVariant::kIdentity;
  else throw ConfigError("unknown neck variant '" + neck + "'");
  const std::string mid = j.value("support_mid", std::string("spatial"));
  if (mid == "spatial") c.support_mid = SupportMidMode::kSpatial;
  else if (mid == "masked_pool") c.support_mid = SupportMidMode::kMaskedPool;
  else throw ConfigError("unknown support_mid mode '" + mid + "'");
  c.temporal_unit = j.value("temporal_unit", false);
  c.temporal_kernel = j.value("temporal_kernel", 3);
}

ModelState::ModelState(const ModelState& other) : config(other.config), metadata(other.metadata) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back({p.name, p.value.clone(), p.frozen});
}

ModelState& ModelState::operator=(const ModelState& other) {
  if (this != &other) {
    ModelState copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void ModelState::add(std::string name, Tensor value, bool frozen) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  value.set_requires_grad(!frozen);
  params_.push_back({std::move(name), std::move(value), frozen});
}

bool ModelState::contains(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
}

const Tensor& ModelState::get(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw ConfigError("missing parameter '" + std::string(name) + "'");
}

Tensor ModelState::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  return {};
}

void ModelState::set_frozen(std::string_view prefix, bool frozen) {
  for (auto& p : params_) {
    if (std::string_view(p.name).substr(0, prefix.size()) == prefix) {
      p.frozen = frozen;
      p.value.set_requires_grad(!frozen);
    }
  }
}

void ModelState::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

std::vector<std::uint8_t> ModelState::parameter_bytes(std::string_view prefix) const {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::vector<std::uint8_t> out;
  for (const auto& p : params_) {
    if (std::string_view(p.name).substr(0, prefix.size()) != prefix) continue;
    const auto d = p.value.data();
    const std::size_t offset = out.size();
    out.resize(offset + d.size_bytes());
    std::memcpy(out.data() + offset, d.data(), d.size_bytes());
  }
  return out;
}

namespace {

Tensor random_normal(const Shape& shape, double std_dev, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, std_dev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

// gain 2 for layers followed by ReLU, 1 otherwise.
void add_conv(ModelState& m, const std::string& name, int c_out, int c_in_per_group, int k, double gain,
              std::uint64_t seed, bool frozen = false) {
  const double fan_in = static_cast<double>(c_in_per_group) * k * k;
  m.add(name + ".weight",
        random_normal({c_out, c_in_per_group, k, k}, std::sqrt(gain / fan_in), derive_seed(seed, "init/" + name)),
        frozen);
  m.add(name + ".bias", Tensor(Shape{c_out}, 0.0), frozen);
}

}  // namespace

ModelState initialize_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelState m(config);
  m.config.temporal_unit = false;
  const auto& bb = config.backbone;
  int c_in = bb.in_channels;
  for (std::size_t s = 0; s < bb.widths.size(); ++s) {
    const bool frozen =
        std::find(bb.frozen_stages.begin(), bb.frozen_stages.end(), static_cast<int>(s)) != bb.frozen_stages.end();
    const std::string prefix = "backbone.stage" + std::to_string(s);
    add_conv(m, prefix + ".conv0", bb.widths[s], c_in, 3, 2.0, seed, frozen);
    add_conv(m, prefix + ".conv1", bb.widths[s], bb.widths[s], 3, 2.0, seed, frozen);
    c_in = bb.widths[s];
  }
  const int c_mid = bb.mid_channels();
  add_conv(m, "fusion", c_mid, 1 + 2 * c_mid, 1, 1.0, seed);
  if (config.neck == NeckVariant::kLight) {
    add_conv(m, "neck.fine", c_mid, c_mid, 3, 2.0, seed);
    add_conv(m, "neck.coarse", c_mid, c_mid, 3, 2.0, seed);
    add_conv(m, "neck.merge", c_mid, c_mid, 3, 1.0, seed);
  }
  add_conv(m, "head.conv3", c_mid, c_mid, 3, 2.0, seed);
  add_conv(m, "head.conv1", 2, c_mid, 1, 1.0, seed);
  if (config.temporal_unit) attach_temporal_unit(m, seed);
  return m;
}

void attach_temporal_unit(ModelState& model, std::uint64_t seed) {
  if (model.contains("temporal.depthwise.weight")) throw ConfigError("temporal unit already attached");
  const int c = model.config.backbone.mid_channels();
  const std::uint64_t s = derive_seed(seed, "temporal");
  add_conv(model, "temporal.depthwise", c, 1, 3, 2.0, s);
  add_conv(model, "temporal.pointwise", c, c, 1, 1.0, s);
  for (int k = 0; k < model.config.temporal_kernel; ++k) {
    model.add("temporal.mix.tap" + std::to_string(k) + ".weight", Tensor(Shape{c, c, 1, 1}, 0.0));
  }
  model.add("temporal.mix.bias", Tensor(Shape{c}, 0.0));
  model.config.temporal_unit = true;
}

}  // namespace fsvos
