#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "evoloss/errors.hpp"

namespace evoloss {

// Runtime data types flowing through a loss graph. Vector has fixed length
// 32; FloatList and Probability have one entry per environment action.
enum class DType : std::uint8_t {
  State,
  Action,
  Float,
  Vector,
  FloatList,
  Probability,
};

inline constexpr int kVectorLen = 32;

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::State: return "state";
    case DType::Action: return "action";
    case DType::Float: return "float";
    case DType::Vector: return "vector";
    case DType::FloatList: return "list";
    case DType::Probability: return "prob";
  }
  return "?";
}

inline bool is_array_type(DType t) {
  return t == DType::State || t == DType::Vector || t == DType::FloatList ||
         t == DType::Probability;
}

// List operations accept Probability values as plain lists.
inline bool is_list_like(DType t) {
  return t == DType::FloatList || t == DType::Probability;
}

// A batch of runtime values of one type. Array types live in `mat` (one row
// per sample), Float in `vec`, Action in `act`. Batched evaluation exists so
// minibatch updates hit GEMM instead of 32 separate matrix-vector products.
template <class S>
struct Batch {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  DType type = DType::Float;
  Mat mat;
  Vec vec;
  std::vector<std::int32_t> act;

  int batch() const {
    switch (type) {
      case DType::Action: return static_cast<int>(act.size());
      case DType::Float: return static_cast<int>(vec.size());
      default: return static_cast<int>(mat.rows());
    }
  }

  int dim() const { return is_array_type(type) ? static_cast<int>(mat.cols()) : 1; }

  static Batch scalars(Vec v) {
    Batch b;
    b.type = DType::Float;
    b.vec = std::move(v);
    return b;
  }

  static Batch scalar(S v) { return scalars(Vec::Constant(1, v)); }

  static Batch array(DType t, Mat rows) {
    if (!is_array_type(t)) throw ContractError("Batch::array wants an array type");
    Batch b;
    b.type = t;
    b.mat = std::move(rows);
    return b;
  }

  // Single-sample array from an initializer-friendly vector.
  static Batch array_row(DType t, const Vec& row) {
    return array(t, row.transpose());
  }

  static Batch actions(std::vector<std::int32_t> a) {
    Batch b;
    b.type = DType::Action;
    b.act = std::move(a);
    return b;
  }

  static Batch action(std::int32_t a) { return actions({a}); }

  // Convenience accessors for single-sample use in tests and probes.
  S scalar_at(int i = 0) const { return vec(i); }
};

}  // namespace evoloss
