#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colseg/core/hash.hpp"
#include "colseg/nn/tensor.hpp"

namespace colseg::nn {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Ordered collection of named parameters belonging to one component.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values) {
    for (const auto& p : params_)
      if (p.name == name) throw InvalidArgument("duplicate parameter " + name);
    params_.push_back({name, Tensor::from(std::move(shape), std::move(values), trainable_)});
    return params_.back().tensor;
  }

  // Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
  Tensor add_xavier(const std::string& name, int fan_out, int fan_in, std::mt19937_64& rng) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    std::vector<double> v(static_cast<std::size_t>(fan_out) * fan_in);
    for (auto& x : v) x = dist(rng);
    return add(name, {fan_out, fan_in}, std::move(v));
  }

  Tensor add_normal(const std::string& name, Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return add(name, std::move(shape), std::move(v));
  }

  Tensor add_zeros(const std::string& name, Shape shape) {
    const auto n = shape_numel(shape);
    return add(name, std::move(shape), std::vector<double>(n, 0.0));
  }

  // Changing trainability afterwards flips requires_grad on every tensor.
  void set_trainable(bool trainable) {
    trainable_ = trainable;
    for (auto& p : params_) p.tensor.set_requires_grad(trainable);
  }
  bool trainable() const { return trainable_; }

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }

  const Tensor& get(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    throw InvalidArgument("no parameter named " + name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  // Content hash over names, shapes and raw values.
  std::uint64_t content_hash() const {
    Fnv1a h;
    for (const auto& p : params_) {
      h.update(p.name);
      for (int d : p.tensor.shape()) h.update_pod(d);
      for (double v : p.tensor.data()) h.update_pod(v);
    }
    return h.digest();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& p : params_)
      j[p.name] = {{"shape", p.tensor.shape()},
                   {"values", std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())}};
    return j;
  }

  void load_json(const nlohmann::json& j) {
    for (auto& p : params_) {
      if (!j.contains(p.name)) throw FormatError("checkpoint lacks parameter " + p.name);
      const auto& e = j.at(p.name);
      if (e.at("shape").get<Shape>() != p.tensor.shape())
        throw FormatError("checkpoint shape mismatch for " + p.name);
      const auto values = e.at("values").get<std::vector<double>>();
      auto dst = p.tensor.mutable_data();
      std::copy(values.begin(), values.end(), dst.begin());
    }
  }

 private:
  std::vector<NamedParam> params_;
  bool trainable_ = true;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto w = p.mutable_data();
      auto g = p.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1 - cfg_.beta1) * g[i];
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1 - cfg_.beta2) * g[i] * g[i];
        w[i] -= cfg_.lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + cfg_.eps);
      }
    }
  }

  long steps_taken() const { return t_; }

  nlohmann::json state() const { return {{"t", t_}, {"m", m_}, {"v", v_}}; }
  void load_state(const nlohmann::json& j) {
    t_ = j.at("t").get<long>();
    auto m = j.at("m").get<std::vector<std::vector<double>>>();
    auto v = j.at("v").get<std::vector<std::vector<double>>>();
    if (m.size() != m_.size() || v.size() != v_.size())
      throw FormatError("optimizer state does not match parameter list");
    for (std::size_t k = 0; k < m.size(); ++k)
      if (m[k].size() != m_[k].size() || v[k].size() != v_[k].size())
        throw FormatError("optimizer state size mismatch");
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace colseg::nn
