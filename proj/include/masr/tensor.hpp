#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "masr/error.hpp"

namespace masr {

// What a parameter tensor is, which drives regularization and perturbation.
enum class TensorRole { embedding, metric, bias, affine };

// Which entity family indexes the rows of an embedding or bias table.
enum class Entity { none, user, playlist, song };

// Dense row-major matrix with a name. When `padded` is set, row 0 is the
// padding slot: it stays all-zero and no optimizer ever writes it.
struct Tensor {
  std::string name;
  TensorRole role = TensorRole::affine;
  Entity entity = Entity::none;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool padded = false;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::string n, TensorRole r, Entity e, std::size_t rs, std::size_t cs, bool pad)
      : name(std::move(n)), role(r), entity(e), rows(rs), cols(cs), padded(pad),
        values(rs * cs, 0.0) {}

  std::size_t size() const noexcept { return values.size(); }
  std::size_t first_row() const noexcept { return padded ? 1 : 0; }

  std::span<double> row(std::size_t r) noexcept { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {values.data() + r * cols, cols};
  }

  // Entries excluding the padding row.
  std::span<double> trainable() noexcept {
    return std::span<double>(values).subspan(first_row() * cols);
  }
  std::span<const double> trainable() const noexcept {
    return std::span<const double>(values).subspan(first_row() * cols);
  }

  bool same_shape(const Tensor& o) const noexcept {
    return rows == o.rows && cols == o.cols && padded == o.padded;
  }
};

// Ordered collection of named tensors. Gradients, Adam moments and
// adversarial perturbations all use the same container with matching layout.
class ParamSet {
 public:
  Tensor& add(Tensor t) {
    if (find(t.name) != nullptr) {
      throw Error("shape", "duplicate tensor name '" + t.name + "'");
    }
    tensors_.push_back(std::move(t));
    return tensors_.back();
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }

  Tensor& operator[](std::size_t i) noexcept { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const noexcept { return tensors_[i]; }

  auto begin() noexcept { return tensors_.begin(); }
  auto end() noexcept { return tensors_.end(); }
  auto begin() const noexcept { return tensors_.begin(); }
  auto end() const noexcept { return tensors_.end(); }

  const Tensor* find(std::string_view name) const noexcept {
    for (const auto& t : tensors_) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  Tensor* find(std::string_view name) noexcept {
    return const_cast<Tensor*>(std::as_const(*this).find(name));
  }

  int index_of(std::string_view name) const noexcept {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name == name) return static_cast<int>(i);
    }
    return -1;
  }

  const Tensor& at(std::string_view name) const {
    const Tensor* t = find(name);
    if (t == nullptr) throw Error("shape", "no tensor named '" + std::string(name) + "'");
    return *t;
  }
  Tensor& at(std::string_view name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
  }

  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& t : tensors_) {
      out.tensors_.emplace_back(t.name, t.role, t.entity, t.rows, t.cols, t.padded);
    }
    return out;
  }

  bool same_layout(const ParamSet& o) const noexcept {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (tensors_[i].name != o.tensors_[i].name || !tensors_[i].same_shape(o.tensors_[i])) {
        return false;
      }
    }
    return true;
  }

  void fill_zero() noexcept {
    for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), 0.0);
  }

  // Name of the first tensor holding a NaN or Inf, or empty.
  std::string first_non_finite() const {
    for (const auto& t : tensors_) {
      for (double v : t.values) {
        if (!std::isfinite(v)) return t.name;
      }
    }
    return {};
  }

 private:
  std::vector<Tensor> tensors_;
};

inline void require_same_layout(const ParamSet& a, const ParamSet& b, std::string_view what) {
  if (!a.same_layout(b)) {
    throw Error("shape", std::string(what) + ": tensor layouts differ");
  }
}

// a += scale * b, tensor by tensor.
inline void axpy(ParamSet& a, double scale, const ParamSet& b) {
  require_same_layout(a, b, "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto& av = a[i].values;
    const auto& bv = b[i].values;
    for (std::size_t k = 0; k < av.size(); ++k) av[k] += scale * bv[k];
  }
}

}  // namespace masr
