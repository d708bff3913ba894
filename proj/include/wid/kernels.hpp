// Hot numeric kernels on raw row-major float buffers.
//
// wid::kern::      OpenMP-parallel versions used by the engine.
// wid::kern::ref:: serial reference implementations with the identical
//                  accumulation order, kept for testing and benchmarking.
//
// Every output element is written by exactly one thread and every reduction
// runs in a fixed serial order with float64 accumulators, so kern:: results
// are bit-identical to kern::ref:: and independent of the thread count.
#pragma once

#include <cstdint>

namespace wid::kern {

// c[m x n] = a[m x k] * b[k x n]          (+= when accumulate)
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
// c[m x n] = a[m x k] * b[n x k]^T        (+= when accumulate)
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
// c[m x n] = a[r x m]^T * b[r x n]        (+= when accumulate)
void matmul_tn(const float* a, const float* b, float* c, int r, int m, int n, bool accumulate = false);

void add_bias_rows(float* y, const float* bias, int m, int n);
// db[n] += column sums of dy[m x n]
void col_sum_acc(const float* dy, float* db, int m, int n);

void add_inplace(float* y, const float* x, int64_t count);
void copy(float* dst, const float* src, int64_t count);
void transpose(const float* a, float* at, int m, int n);

void gelu_forward(const float* x, float* y, int64_t count);
// dx[i] = dy[i] * gelu'(x[i])
void gelu_backward(const float* x, const float* dy, float* dx, int64_t count);

void layer_norm_forward(const float* x, const float* gamma, const float* beta, float eps,
                        float* y, float* mean, float* rstd, int m, int n);
void layer_norm_backward(const float* x, const float* gamma, const float* mean, const float* rstd,
                         const float* dy, float* dx, float* dgamma, float* dbeta, int m, int n);

void softmax_rows_forward(const float* x, float* p, int m, int n);
void softmax_rows_backward(const float* p, const float* dy, float* dx, int m, int n);

// Multi-head scaled dot-product attention over packed [b, n, heads*dk]
// projections. probs is [b, heads, n, n]; out is [b, n, heads*dk].
// causal limits each query position to keys at the same or earlier positions.
void attention_forward(const float* q, const float* k, const float* v,
                       float* probs, float* out,
                       int b, int n, int heads, int dk, float scale, bool causal);
// Accumulates into dq, dk_, dv.
void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, float* dq, float* dk_, float* dv,
                        int b, int n, int heads, int dk, float scale, bool causal);

void embedding_gather(const float* table, const int32_t* ids, float* out, int count, int dim);
// table_grad[ids[i], :] += dout[i, :]
void embedding_scatter_acc(const float* dout, const int32_t* ids, float* table_grad,
                           int count, int rows, int dim);

// Decoupled weight decay Adam update on one parameter array.
void adamw_update(float* p, const float* g, float* m, float* v, int64_t count,
                  float lr, float beta1, float beta2, float eps, float weight_decay, int64_t step);

namespace ref {
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate = false);
void matmul_tn(const float* a, const float* b, float* c, int r, int m, int n, bool accumulate = false);
void gelu_forward(const float* x, float* y, int64_t count);
void gelu_backward(const float* x, const float* dy, float* dx, int64_t count);
void layer_norm_forward(const float* x, const float* gamma, const float* beta, float eps,
                        float* y, float* mean, float* rstd, int m, int n);
void layer_norm_backward(const float* x, const float* gamma, const float* mean, const float* rstd,
                         const float* dy, float* dx, float* dgamma, float* dbeta, int m, int n);
void softmax_rows_forward(const float* x, float* p, int m, int n);
void attention_forward(const float* q, const float* k, const float* v,
                       float* probs, float* out,
                       int b, int n, int heads, int dk, float scale, bool causal);
void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, float* dq, float* dk_, float* dv,
                        int b, int n, int heads, int dk, float scale, bool causal);
void adamw_update(float* p, const float* g, float* m, float* v, int64_t count,
                  float lr, float beta1, float beta2, float eps, float weight_decay, int64_t step);
}  // namespace ref

}  // namespace wid::kern
