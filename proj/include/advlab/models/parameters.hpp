#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "advlab/core/rng.hpp"
#include "advlab/tensor/tensor.hpp"

namespace advlab {

/// Named model parameters in registration order. Names are unique; the
/// order is the serialization order of checkpoints.
template <typename T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> value) {
    if (index_.contains(name)) throw SpecError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  const Tensor<T>& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw SpecError("no parameter named '" + std::string(name) + "'");
    return entries_[it->second].second;
  }
  Tensor<T>& at(std::string_view name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
  }
  const Tensor<T>& operator()(std::string_view name) const { return at(name); }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }
  std::size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  /// Copies with gradient tracking off; forward passes built on these leave
  /// the originals untouched.
  ParameterSet frozen() const {
    ParameterSet out;
    for (const auto& [name, t] : entries_) out.add(name, t.detach(false));
    return out;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  /// FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& [name, t] : entries_) {
      h = fnv1a64(name, h);
      h = fnv1a64(to_string(t.shape()), h);
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(t.values().data()), t.size() * sizeof(T)), h);
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace advlab
