#include "wid/kernels.hpp"

#include <cmath>
#include <vector>

namespace wid::kern {

namespace {
constexpr float kGeluCoef = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluCubic = 0.044715f;
}  // namespace

void matmul_nn(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<size_t>(n));
#pragma omp for schedule(static)
        for (int i = 0; i < m; ++i) {
            double* ac = acc.data();
            if (accumulate) {
                const float* crow = c + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) ac[j] = crow[j];
            } else {
                for (int j = 0; j < n; ++j) ac[j] = 0.0;
            }
            const float* arow = a + static_cast<size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const float* brow = b + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) ac[j] += av * brow[j];
            }
            float* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] = static_cast<float>(ac[j]);
        }
    }
}

void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n, bool accumulate) {
    // four interleaved accumulators break the serial dependency of a single
    // running sum; the lane split is fixed, so results do not depend on the
    // thread count and match the serial reference exactly
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * k;
        float* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* brow = b + static_cast<size_t>(j) * k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            int kk = 0;
            for (; kk + 4 <= k; kk += 4) {
                s0 += static_cast<double>(arow[kk]) * brow[kk];
                s1 += static_cast<double>(arow[kk + 1]) * brow[kk + 1];
                s2 += static_cast<double>(arow[kk + 2]) * brow[kk + 2];
                s3 += static_cast<double>(arow[kk + 3]) * brow[kk + 3];
            }
            for (; kk < k; ++kk) s0 += static_cast<double>(arow[kk]) * brow[kk];
            double acc = (accumulate ? crow[j] : 0.0) + ((s0 + s1) + (s2 + s3));
            crow[j] = static_cast<float>(acc);
        }
    }
}

void matmul_tn(const float* a, const float* b, float* c, int r, int m, int n, bool accumulate) {
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<size_t>(n));
#pragma omp for schedule(static)
        for (int i = 0; i < m; ++i) {
            double* ac = acc.data();
            if (accumulate) {
                const float* crow = c + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) ac[j] = crow[j];
            } else {
                for (int j = 0; j < n; ++j) ac[j] = 0.0;
            }
            for (int rr = 0; rr < r; ++rr) {
                const double av = a[static_cast<size_t>(rr) * m + i];
                const float* brow = b + static_cast<size_t>(rr) * n;
                for (int j = 0; j < n; ++j) ac[j] += av * brow[j];
            }
            float* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] = static_cast<float>(ac[j]);
        }
    }
}

void add_bias_rows(float* y, const float* bias, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        float* row = y + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) row[j] += bias[j];
    }
}

void col_sum_acc(const float* dy, float* db, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
        double acc = db[j];
        for (int i = 0; i < m; ++i) acc += dy[static_cast<size_t>(i) * n + j];
        db[j] = static_cast<float>(acc);
    }
}

void add_inplace(float* y, const float* x, int64_t count) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) y[i] += x[i];
}

void copy(float* dst, const float* src, int64_t count) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) dst[i] = src[i];
}

void transpose(const float* a, float* at, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) at[static_cast<size_t>(j) * m + i] = a[static_cast<size_t>(i) * n + j];
}

void gelu_forward(const float* x, float* y, int64_t count) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) {
        float v = x[i];
        float inner = kGeluCoef * (v + kGeluCubic * v * v * v);
        y[i] = 0.5f * v * (1.0f + std::tanh(inner));
    }
}

void gelu_backward(const float* x, const float* dy, float* dx, int64_t count) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) {
        float v = x[i];
        float t = std::tanh(kGeluCoef * (v + kGeluCubic * v * v * v));
        float dinner = kGeluCoef * (1.0f + 3.0f * kGeluCubic * v * v);
        float g = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * dinner;
        dx[i] = dy[i] * g;
    }
}

void layer_norm_forward(const float* x, const float* gamma, const float* beta, float eps,
                        float* y, float* mean, float* rstd, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* row = x + static_cast<size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double d = row[j] - mu;
            var += d * d;
        }
        var /= n;
        double rs = 1.0 / std::sqrt(var + eps);
        mean[i] = static_cast<float>(mu);
        rstd[i] = static_cast<float>(rs);
        float* out = y + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j)
            out[j] = static_cast<float>((row[j] - mu) * rs) * gamma[j] + beta[j];
    }
}

void layer_norm_backward(const float* x, const float* gamma, const float* mean, const float* rstd,
                         const float* dy, float* dx, float* dgamma, float* dbeta, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* row = x + static_cast<size_t>(i) * n;
        const float* dyrow = dy + static_cast<size_t>(i) * n;
        float* dxrow = dx + static_cast<size_t>(i) * n;
        const double mu = mean[i];
        const double rs = rstd[i];
        double dnorm_mean = 0.0, dnorm_norm_mean = 0.0;
        for (int j = 0; j < n; ++j) {
            double xhat = (row[j] - mu) * rs;
            double dnorm = static_cast<double>(gamma[j]) * dyrow[j];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * xhat;
        }
        dnorm_mean /= n;
        dnorm_norm_mean /= n;
        for (int j = 0; j < n; ++j) {
            double xhat = (row[j] - mu) * rs;
            double dnorm = static_cast<double>(gamma[j]) * dyrow[j];
            dxrow[j] = static_cast<float>((dnorm - dnorm_mean - xhat * dnorm_norm_mean) * rs);
        }
    }
    // gamma/beta reductions run per output column so the order is fixed.
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
        double dg = dgamma[j], db = dbeta[j];
        for (int i = 0; i < m; ++i) {
            double xhat = (x[static_cast<size_t>(i) * n + j] - static_cast<double>(mean[i])) * rstd[i];
            double d = dy[static_cast<size_t>(i) * n + j];
            dg += d * xhat;
            db += d;
        }
        dgamma[j] = static_cast<float>(dg);
        dbeta[j] = static_cast<float>(db);
    }
}

void softmax_rows_forward(const float* x, float* p, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* row = x + static_cast<size_t>(i) * n;
        float* out = p + static_cast<size_t>(i) * n;
        float mx = row[0];
        for (int j = 1; j < n; ++j) mx = row[j] > mx ? row[j] : mx;
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            double e = std::exp(static_cast<double>(row[j]) - mx);
            out[j] = static_cast<float>(e);
            sum += e;
        }
        double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) out[j] = static_cast<float>(out[j] * inv);
    }
}

void softmax_rows_backward(const float* p, const float* dy, float* dx, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const float* prow = p + static_cast<size_t>(i) * n;
        const float* dyrow = dy + static_cast<size_t>(i) * n;
        float* dxrow = dx + static_cast<size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += static_cast<double>(prow[j]) * dyrow[j];
        for (int j = 0; j < n; ++j)
            dxrow[j] = static_cast<float>(prow[j] * (dyrow[j] - dot));
    }
}

void attention_forward(const float* q, const float* k, const float* v,
                       float* probs, float* out,
                       int b, int n, int heads, int dk, float scale, bool causal) {
    const int ai = heads * dk;
#pragma omp parallel for collapse(2) schedule(static)
    for (int bi = 0; bi < b; ++bi) {
        for (int h = 0; h < heads; ++h) {
            const float* qb = q + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            const float* kb = k + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            const float* vb = v + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            float* pb = probs + (static_cast<size_t>(bi) * heads + h) * n * n;
            float* ob = out + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            for (int i = 0; i < n; ++i) {
                const int jmax = causal ? i + 1 : n;
                const float* qrow = qb + static_cast<size_t>(i) * ai;
                float* prow = pb + static_cast<size_t>(i) * n;
                // scaled dot-product logits, then a stable softmax over visible keys
                double mx = -1e30;
                for (int j = 0; j < jmax; ++j) {
                    const float* krow = kb + static_cast<size_t>(j) * ai;
                    double dot = 0.0;
                    for (int d = 0; d < dk; ++d) dot += static_cast<double>(qrow[d]) * krow[d];
                    dot *= scale;
                    prow[j] = static_cast<float>(dot);
                    if (dot > mx) mx = dot;
                }
                double sum = 0.0;
                for (int j = 0; j < jmax; ++j) {
                    double e = std::exp(static_cast<double>(prow[j]) - mx);
                    prow[j] = static_cast<float>(e);
                    sum += e;
                }
                const double inv = 1.0 / sum;
                for (int j = 0; j < jmax; ++j) prow[j] = static_cast<float>(prow[j] * inv);
                for (int j = jmax; j < n; ++j) prow[j] = 0.0f;
                float* orow = ob + static_cast<size_t>(i) * ai;
                for (int d = 0; d < dk; ++d) {
                    double acc = 0.0;
                    for (int j = 0; j < jmax; ++j)
                        acc += static_cast<double>(prow[j]) * vb[static_cast<size_t>(j) * ai + d];
                    orow[d] = static_cast<float>(acc);
                }
            }
        }
    }
}

void attention_backward(const float* q, const float* k, const float* v, const float* probs,
                        const float* dout, float* dq, float* dk_, float* dv,
                        int b, int n, int heads, int dk, float scale, bool causal) {
    const int ai = heads * dk;
#pragma omp parallel for collapse(2) schedule(static)
    for (int bi = 0; bi < b; ++bi) {
        for (int h = 0; h < heads; ++h) {
            const float* qb = q + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            const float* kb = k + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            const float* vb = v + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            const float* pb = probs + (static_cast<size_t>(bi) * heads + h) * n * n;
            const float* dob = dout + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            float* dqb = dq + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            float* dkb = dk_ + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            float* dvb = dv + static_cast<size_t>(bi) * n * ai + static_cast<size_t>(h) * dk;
            std::vector<double> dz(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                const int jmax = causal ? i + 1 : n;
                const float* prow = pb + static_cast<size_t>(i) * n;
                const float* dorow = dob + static_cast<size_t>(i) * ai;
                // dprobs[j] = <dout_i, v_j>; then the softmax VJP gives dlogits
                double dot = 0.0;
                for (int j = 0; j < jmax; ++j) {
                    const float* vrow = vb + static_cast<size_t>(j) * ai;
                    double dp = 0.0;
                    for (int d = 0; d < dk; ++d) dp += static_cast<double>(dorow[d]) * vrow[d];
                    dz[static_cast<size_t>(j)] = dp;
                    dot += dp * prow[j];
                }
                for (int j = 0; j < jmax; ++j)
                    dz[static_cast<size_t>(j)] = static_cast<double>(prow[j]) * (dz[static_cast<size_t>(j)] - dot);
                float* dqrow = dqb + static_cast<size_t>(i) * ai;
                for (int j = 0; j < jmax; ++j) {
                    const double z = dz[static_cast<size_t>(j)] * scale;
                    const float* krow = kb + static_cast<size_t>(j) * ai;
                    const float* qrow = qb + static_cast<size_t>(i) * ai;
                    float* dkrow = dkb + static_cast<size_t>(j) * ai;
                    float* dvrow = dvb + static_cast<size_t>(j) * ai;
                    const double pz = prow[j];
                    for (int d = 0; d < dk; ++d) {
                        dqrow[d] = static_cast<float>(dqrow[d] + z * krow[d]);
                        dkrow[d] = static_cast<float>(dkrow[d] + z * qrow[d]);
                        dvrow[d] = static_cast<float>(dvrow[d] + pz * dorow[d]);
                    }
                }
            }
        }
    }
}

void embedding_gather(const float* table, const int32_t* ids, float* out, int count, int dim) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < count; ++i) {
        const float* src = table + static_cast<size_t>(ids[i]) * dim;
        float* dst = out + static_cast<size_t>(i) * dim;
        for (int d = 0; d < dim; ++d) dst[d] = src[d];
    }
}

void embedding_scatter_acc(const float* dout, const int32_t* ids, float* table_grad,
                           int count, int rows, int dim) {
    (void)rows;
    // Parallel over feature columns: repeated ids collide only within a
    // column, which a single thread owns in fixed order.
#pragma omp parallel for schedule(static)
    for (int d = 0; d < dim; ++d) {
        for (int i = 0; i < count; ++i) {
            table_grad[static_cast<size_t>(ids[i]) * dim + d] += dout[static_cast<size_t>(i) * dim + d];
        }
    }
}

void adamw_update(float* p, const float* g, float* m, float* v, int64_t count,
                  float lr, float beta1, float beta2, float eps, float weight_decay, int64_t step) {
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(step));
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < count; ++i) {
        float gi = g[i];
        m[i] = beta1 * m[i] + (1.0f - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0f - beta2) * gi * gi;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        p[i] = static_cast<float>(p[i] - lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]));
    }
}

}  // namespace wid::kern
