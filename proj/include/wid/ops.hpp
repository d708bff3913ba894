// Tensor-level ops: shape-checked wrappers around the raw kernels, plus the
// loss and the finite-difference harness used to validate every backward pass.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "wid/tensor.hpp"

namespace wid::ops {

// y = x @ w, x [m,k], w [k,n]
Tensor matmul(const Tensor& x, const Tensor& w);
// accumulates into dx/dw when they are already sized, pass nullptr to skip one side
void matmul_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor* dw);

// y = x @ w + b (b broadcast over rows)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                     Tensor* dx, Tensor* dw, Tensor* db);

Tensor gelu(const Tensor& x);
void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

// per-row normalization; mean/rstd are [m] caches for the backward pass
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                  Tensor& mean, Tensor& rstd);
void layer_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& mean, const Tensor& rstd,
                         const Tensor& dy, Tensor& dx, Tensor& dgamma, Tensor& dbeta);

Tensor softmax_rows(const Tensor& x);
void softmax_rows_backward(const Tensor& p, const Tensor& dy, Tensor& dx);

// out[i,:] = table[ids[i],:]
Tensor embedding_gather(const Tensor& table, const std::vector<int32_t>& ids);
void embedding_backward(const Tensor& dout, const std::vector<int32_t>& ids, Tensor& dtable);

// Mean cross entropy over positions with target >= 0; targets of -1 are
// ignored. dlogits gets the mean-normalized softmax-minus-onehot gradient.
double masked_cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets, Tensor& dlogits);

// KL(p_teacher || p_student) row-mean at temperature tau, both inputs logits.
// dlogits_student gets the gradient; rows with select[i]==0 are skipped when
// select is non-empty.
double kd_kl_loss(const Tensor& teacher_logits, const Tensor& student_logits, float tau,
                  const std::vector<uint8_t>& select, Tensor& dlogits_student);

struct FdResult {
    double max_rel_err = 0.0;
    int checked = 0;
};

// Central-difference check of analytic against f. Relative error per element
// is |analytic - numeric| / max(1, |numeric|); returns the worst one.
FdResult finite_difference_check(const std::function<double(const Tensor&)>& f,
                                 const Tensor& x, const Tensor& analytic,
                                 double h = 1e-3, int max_elems = 0);

}  // namespace wid::ops
