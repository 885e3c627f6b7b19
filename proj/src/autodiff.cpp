#include "curvlab/autodiff.hpp"

namespace curvlab::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAddColumn: return "add_column";
    case OpKind::kMulColumn: return "mul_column";
    case OpKind::kRowMean: return "row_mean";
    case OpKind::kSum: return "sum";
    case OpKind::kSlice: return "slice";
    case OpKind::kConcat: return "concat";
    case OpKind::kReshape: return "reshape";
    case OpKind::kUnary: return "unary";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
  }
  return "unknown";
}

}  // namespace curvlab::ad
