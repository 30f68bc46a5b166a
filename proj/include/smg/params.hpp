#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "smg/autograd.hpp"

namespace smg::backbone {

/**
 * Ordered, uniquely named parameter tensors. Copies are deep: a copied store
 * never aliases the original's storage or gradients.
 */
template <typename T>
class BasicParamStore {
 public:
  struct Entry {
    std::string name;
    ad::Var<T> var;
  };

  BasicParamStore() = default;
  BasicParamStore(const BasicParamStore& other) { *this = other; }
  BasicParamStore& operator=(const BasicParamStore& other) {
    if (this == &other) return *this;
    entries_.clear();
    index_.clear();
    for (const auto& e : other.entries_) add(e.name, e.var.value());
    return *this;
  }
  BasicParamStore(BasicParamStore&&) noexcept = default;
  BasicParamStore& operator=(BasicParamStore&&) noexcept = default;

  ad::Var<T>& add(const std::string& name, Tensor<T> init) {
    if (name.empty()) throw ArgumentError("parameter name must not be empty");
    if (index_.count(name)) throw ArgumentError("duplicate parameter name " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({name, ad::Var<T>::parameter(std::move(init))});
    return entries_.back().var;
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  const ad::Var<T>& get(std::string_view name) const { return entries_[lookup(name)].var; }
  ad::Var<T>& get(std::string_view name) { return entries_[lookup(name)].var; }

  /// Overwrites values in place; the shape is fixed at creation.
  void assign(std::string_view name, const Tensor<T>& values) {
    auto& var = get(name);
    if (var.shape() != values.shape()) {
      throw ShapeError("parameter " + std::string(name) + " has shape " + shape_string(var.shape()) + ", got " +
                       shape_string(values.shape()));
    }
    var.mutable_value() = values;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  ad::Var<T>& at(std::size_t i) { return entries_.at(i).var; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  void set_requires_grad(bool on) {
    for (auto& e : entries_) e.var.set_requires_grad(on);
  }

  template <typename U>
  BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.var.value().template cast<U>());
    return out;
  }

  bool operator==(const BasicParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name) return false;
      if (!(entries_[i].var.value() == other.entries_[i].var.value())) return false;
    }
    return true;
  }

 private:
  std::size_t lookup(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw LookupError("no parameter named " + std::string(name));
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = BasicParamStore<float>;

}  // namespace smg::backbone
