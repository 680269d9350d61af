#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fsvos/tensor.hpp"

namespace fsvos {

/// Small four-stage CNN with a mid and a high feature tap.
struct BackboneConfig {
  int in_channels = 3;
  std::vector<int> widths{8, 16, 24, 32};
  std::vector<int> strides{2, 2, 2, 1};
  int mid_tap_stage = 1;   // end of the first half
  int high_tap_stage = 3;  // end of the last stage
  // Stages whose parameters start frozen; empty means all trainable.
  std::vector<int> frozen_stages;

  void validate() const;
  int stride_at(int stage) const;
  int total_stride() const { return stride_at(high_tap_stage); }
  int mid_channels() const { return widths.at(static_cast<std::size_t>(mid_tap_stage)); }
  int high_channels() const { return widths.at(static_cast<std::size_t>(high_tap_stage)); }
};

enum class NeckVariant { kLight, kIdentity };
// How support mid-level features enter the fusion concat.
enum class SupportMidMode { kSpatial, kMaskedPool };

struct ModelConfig {
  BackboneConfig backbone;
  NeckVariant neck = NeckVariant::kLight;
  SupportMidMode support_mid = SupportMidMode::kSpatial;
  bool temporal_unit = false;
  int temporal_kernel = 3;  // taps of the cross-frame mixing conv

  void validate() const;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;
};

/// Named parameters plus architecture. Copying deep-copies every tensor, so a
/// copy is an independent model (the teacher is made this way).
class ModelState {
 public:
  ModelConfig config;
  nlohmann::json metadata = nlohmann::json::object();

  ModelState() = default;
  explicit ModelState(ModelConfig cfg) : config(std::move(cfg)) {}
  ModelState(const ModelState& other);
  ModelState& operator=(const ModelState& other);
  ModelState(ModelState&&) noexcept = default;
  ModelState& operator=(ModelState&&) noexcept = default;

  void add(std::string name, Tensor value, bool frozen = false);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  // Undefined tensor when absent.
  Tensor find(std::string_view name) const;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  // Freezes or unfreezes every parameter whose name starts with prefix.
  void set_frozen(std::string_view prefix, bool frozen);
  void zero_grad();
  std::size_t parameter_count() const;

  // Raw little-endian bytes of parameters under prefix ("" for all), in order.
  std::vector<std::uint8_t> parameter_bytes(std::string_view prefix = "") const;

 private:
  std::vector<Parameter> params_;
};

/// Fresh phase-1 model: backbone, fusion, neck, head. Deterministic in seed.
ModelState initialize_model(const ModelConfig& config, std::uint64_t seed);

/// Inserts the temporal attention unit with its cross-frame branch at zero.
void attach_temporal_unit(ModelState& model, std::uint64_t seed);

}  // namespace fsvos
