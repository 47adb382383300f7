// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration: one document holding the model, the training
// recipe, and the data paths. The schema is strict — unknown keys are
// rejected so a typo cannot silently fall back to a default.
#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "hdiv/optim.hpp"
#include "hdiv/pyramid.hpp"

namespace hdiv {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_root;
  std::string val_root;
  std::string out_dir = "run";
  std::string dtype = "f32";
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::string& where,
                                const std::set<std::string>& allowed) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read_key(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  using detail::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  detail::reject_unknown_keys(doc, "top level", {"model", "train", "data", "dtype", "out_dir"});

  RunConfig cfg;
  if (doc.contains("model")) {
    const auto& m = doc.at("model");
    if (!m.is_object()) throw ConfigError("config: 'model' must be an object");
    detail::reject_unknown_keys(m, "model",
                                {"channels", "levels", "blocks", "subnet", "growth", "alpha",
                                 "noise_fraction", "haar"});
    detail::read_key(m, "channels", cfg.model.channels);
    detail::read_key(m, "levels", cfg.model.levels);
    detail::read_key(m, "blocks", cfg.model.blocks);
    std::string subnet = "dense";
    if (cfg.model.subnet.kind == SubnetKind::kResidual) subnet = "residual";
    detail::read_key(m, "subnet", subnet);
    if (subnet == "dense") {
      cfg.model.subnet.kind = SubnetKind::kDense;
    } else if (subnet == "residual") {
      cfg.model.subnet.kind = SubnetKind::kResidual;
    } else {
      throw ConfigError("config: subnet must be 'dense' or 'residual'");
    }
    // Default hidden width follows the subnet flavor unless set explicitly.
    cfg.model.subnet.growth = cfg.model.subnet.kind == SubnetKind::kDense ? 32 : 16;
    detail::read_key(m, "growth", cfg.model.subnet.growth);
    detail::read_key(m, "alpha", cfg.model.alpha);
    detail::read_key(m, "noise_fraction", cfg.model.noise_fraction);
    std::string haar = "averaging";
    detail::read_key(m, "haar", haar);
    if (haar == "averaging") {
      cfg.model.norm = HaarNorm::kAveraging;
    } else if (haar == "orthonormal") {
      cfg.model.norm = HaarNorm::kOrthonormal;
    } else {
      throw ConfigError("config: haar must be 'averaging' or 'orthonormal'");
    }
  }
  if (doc.contains("train")) {
    const auto& t = doc.at("train");
    if (!t.is_object()) throw ConfigError("config: 'train' must be an object");
    detail::reject_unknown_keys(t, "train",
                                {"iterations", "batch_size", "patch_size", "base_lr",
                                 "decay_every", "seed", "weights", "grad_clip", "val_every",
                                 "awgn_sigma"});
    detail::read_key(t, "iterations", cfg.train.iterations);
    detail::read_key(t, "batch_size", cfg.train.batch_size);
    detail::read_key(t, "patch_size", cfg.train.patch_size);
    detail::read_key(t, "base_lr", cfg.train.base_lr);
    detail::read_key(t, "decay_every", cfg.train.decay_every);
    detail::read_key(t, "seed", cfg.train.seed);
    detail::read_key(t, "grad_clip", cfg.train.grad_clip);
    detail::read_key(t, "val_every", cfg.train.val_every);
    detail::read_key(t, "awgn_sigma", cfg.train.awgn_sigma);
    if (t.contains("weights")) {
      const auto& w = t.at("weights");
      if (!w.is_object()) throw ConfigError("config: 'weights' must be an object");
      detail::reject_unknown_keys(w, "train.weights", {"recon", "guide", "dist"});
      detail::read_key(w, "recon", cfg.train.weights.recon);
      detail::read_key(w, "guide", cfg.train.weights.guide);
      detail::read_key(w, "dist", cfg.train.weights.dist);
    }
  }
  if (doc.contains("data")) {
    const auto& d = doc.at("data");
    if (!d.is_object()) throw ConfigError("config: 'data' must be an object");
    detail::reject_unknown_keys(d, "data", {"train_root", "val_root"});
    detail::read_key(d, "train_root", cfg.train_root);
    detail::read_key(d, "val_root", cfg.val_root);
  }
  detail::read_key(doc, "dtype", cfg.dtype);
  if (cfg.dtype != "f32" && cfg.dtype != "f64")
    throw ConfigError("config: dtype must be 'f32' or 'f64'");
  detail::read_key(doc, "out_dir", cfg.out_dir);

  // Fail fast on structural problems; path existence is checked at use time.
  ChannelPlan::make(cfg.model);
  cfg.train.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

}  // namespace hdiv
