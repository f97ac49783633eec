#pragma once

#include <map>
#include <string>

#include "locater/errors.hpp"
#include "locater/tensor.hpp"

namespace locater {

// Named parameter tree plus a shape-isomorphic gradient map. std::map keeps
// iteration order stable so optimizer sweeps are deterministic.
class ParamTree {
 public:
  Tensor& add(const std::string& key, Tensor init) {
    auto [it, fresh] = params_.emplace(key, std::move(init));
    if (!fresh) throw ConfigError("param tree: duplicate key " + key);
    return it->second;
  }

  bool has(const std::string& key) const { return params_.count(key) != 0; }

  Tensor& at(const std::string& key) {
    auto it = params_.find(key);
    if (it == params_.end()) throw ConfigError("param tree: unknown key " + key);
    return it->second;
  }
  const Tensor& at(const std::string& key) const {
    auto it = params_.find(key);
    if (it == params_.end()) throw ConfigError("param tree: unknown key " + key);
    return it->second;
  }

  // Gradient slot, allocated to the parameter's shape on first use.
  Tensor& grad(const std::string& key) {
    const Tensor& p = at(key);
    auto it = grads_.find(key);
    if (it == grads_.end()) it = grads_.emplace(key, Tensor(p.shape())).first;
    else if (!it->second.same_shape(p))
      throw ShapeError("param tree: gradient shape drifted for " + key);
    return it->second;
  }

  void zero_grads() {
    for (auto& [k, g] : grads_) {
      (void)k;
      for (auto& v : g.vec()) v = 0.0;
    }
  }

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  const std::map<std::string, Tensor>& grads() const { return grads_; }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& [k, t] : params_) {
      (void)k;
      n += t.size();
    }
    return n;
  }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> grads_;
};

}  // namespace locater
