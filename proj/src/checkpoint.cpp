// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "sslcap/error.hpp"

namespace sslcap {

namespace {

constexpr char kMagic[] = "SSLCKPT1";
constexpr std::size_t kMagicLen = 8;

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["version"] = ckpt.version;
  header["config_digest"] = ckpt.config_digest;
  header["position"] = {{"stage_index", ckpt.stage_index}, {"epoch", ckpt.epoch}};
  header["rng_state"] = ckpt.rng_state;
  header["supervised_epochs"] = ckpt.supervised_epochs;
  header["optimizer"] = {
      {"steps", ckpt.optimizer_steps}, {"warmup", ckpt.optimizer_warmup}, {"kind", ckpt.optimizer_kind}};
  const std::string text = header.dump();

  std::string out(kMagic, kMagicLen);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  detail::put_u32(out, static_cast<std::uint32_t>(ckpt.groups.size()));
  for (const ParameterGroup& g : ckpt.groups) {
    if (g.name.size() > 0xFFFF) throw ParameterError("checkpoint group name too long");
    detail::put_u16(out, static_cast<std::uint16_t>(g.name.size()));
    out += g.name;
    detail::put_u32(out, static_cast<std::uint32_t>(g.values.size()));
    for (float f : g.values) detail::put_f32(out, f);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  detail::ByteReader in(bytes, "checkpoint");
  if (in.str(kMagicLen, "magic") != std::string(kMagic, kMagicLen)) throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t header_len = in.u32("header length");
  const std::string text = in.str(header_len, "header");

  Checkpoint ckpt;
  try {
    const nlohmann::json h = nlohmann::json::parse(text);
    ckpt.version = h.at("version").get<int>();
    if (ckpt.version != kCheckpointVersion) {
      throw CompatibilityError("checkpoint version " + std::to_string(ckpt.version) + " is not supported");
    }
    ckpt.config_digest = h.at("config_digest").get<std::string>();
    ckpt.stage_index = h.at("position").at("stage_index").get<std::size_t>();
    ckpt.epoch = h.at("position").at("epoch").get<std::size_t>();
    ckpt.rng_state = h.at("rng_state").get<std::string>();
    ckpt.supervised_epochs = h.at("supervised_epochs").get<std::size_t>();
    ckpt.optimizer_steps = h.at("optimizer").at("steps").get<std::size_t>();
    ckpt.optimizer_warmup = h.at("optimizer").at("warmup").get<std::size_t>();
    ckpt.optimizer_kind = h.at("optimizer").at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  const std::uint32_t count = in.u32("group count");
  for (std::uint32_t i = 0; i < count; ++i) {
    ParameterGroup g;
    g.name = in.str(in.u16("group name length"), "group name");
    const std::uint32_t n = in.u32("group size");
    in.need(static_cast<std::size_t>(n) * 4, "group values");
    g.values.resize(n);
    for (std::uint32_t j = 0; j < n; ++j) g.values[j] = in.f32("group values");
    ckpt.groups.push_back(std::move(g));
  }
  if (!in.done()) throw FormatError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(detail::read_file(path)); }

ParameterGroup make_group(const std::string& name, const ad::Matrix& value) {
  ParameterGroup g{name, {}};
  g.values.reserve(static_cast<std::size_t>(value.size()));
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    for (Eigen::Index c = 0; c < value.cols(); ++c) {
      const auto f = static_cast<float>(value(r, c));
      if (static_cast<double>(f) != value(r, c)) {
        throw ParameterError("parameter '" + name + "' holds a value that is not f32-representable");
      }
      g.values.push_back(f);
    }
  }
  return g;
}

void restore_group(const ParameterGroup& group, ad::Matrix& value) {
  if (group.values.size() != static_cast<std::size_t>(value.size())) {
    throw CompatibilityError("checkpoint group '" + group.name + "' has " + std::to_string(group.values.size()) +
                             " values, expected " + std::to_string(value.size()));
  }
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    for (Eigen::Index c = 0; c < value.cols(); ++c) value(r, c) = group.values[k++];
  }
}

const ParameterGroup* find_group(const Checkpoint& ckpt, const std::string& name) {
  for (const ParameterGroup& g : ckpt.groups) {
    if (g.name == name) return &g;
  }
  return nullptr;
}

std::vector<ParameterGroup> model_groups(const CaptionModel& model) {
  std::vector<ParameterGroup> out;
  for (const ad::Parameter* p : model.parameters()) out.push_back(make_group(p->name, p->value));
  return out;
}

void restore_model(CaptionModel& model, const Checkpoint& ckpt) {
  for (ad::Parameter* p : model.parameters()) {
    const ParameterGroup* g = find_group(ckpt, p->name);
    if (g == nullptr) throw CompatibilityError("checkpoint lacks parameter group '" + p->name + "'");
    restore_group(*g, p->value);
  }
  model.set_supervised_epochs(ckpt.supervised_epochs);
}

}  // namespace sslcap
