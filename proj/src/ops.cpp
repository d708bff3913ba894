#include "wid/ops.hpp"

#include <cmath>

#include "wid/common.hpp"
#include "wid/kernels.hpp"

namespace wid::ops {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw DimError(msg);
}

}  // namespace

Tensor matmul(const Tensor& x, const Tensor& w) {
    require(x.rank() == 2 && w.rank() == 2, "matmul: need 2-d tensors");
    require(x.cols() == w.rows(), "matmul: " + shape_str(x.shape) + " x " + shape_str(w.shape));
    Tensor y = Tensor::zeros({x.rows(), w.cols()});
    kern::matmul_nn(x.ptr(), w.ptr(), y.ptr(), x.rows(), x.cols(), w.cols());
    return y;
}

void matmul_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor* dw) {
    require(dy.rows() == x.rows() && dy.cols() == w.cols(), "matmul_backward: dy shape");
    if (dx) {
        require(x.same_shape(*dx), "matmul_backward: dx shape");
        kern::matmul_nt(dy.ptr(), w.ptr(), dx->ptr(), dy.rows(), dy.cols(), w.rows(), true);
    }
    if (dw) {
        require(w.same_shape(*dw), "matmul_backward: dw shape");
        kern::matmul_tn(x.ptr(), dy.ptr(), dw->ptr(), x.rows(), x.cols(), dy.cols(), true);
    }
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(b.numel() == static_cast<size_t>(w.cols()), "linear: bias size");
    Tensor y = matmul(x, w);
    kern::add_bias_rows(y.ptr(), b.ptr(), y.rows(), y.cols());
    return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                     Tensor* dx, Tensor* dw, Tensor* db) {
    matmul_backward(x, w, dy, dx, dw);
    if (db) {
        require(db->numel() == static_cast<size_t>(dy.cols()), "linear_backward: db size");
        kern::col_sum_acc(dy.ptr(), db->ptr(), dy.rows(), dy.cols());
    }
}

Tensor gelu(const Tensor& x) {
    Tensor y = Tensor::zeros(x.shape);
    kern::gelu_forward(x.ptr(), y.ptr(), x.numel());
    return y;
}

void gelu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
    require(dy.same_shape(x) && dx.same_shape(x), "gelu_backward: shape");
    kern::gelu_backward(x.ptr(), dy.ptr(), dx.ptr(), x.numel());
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                  Tensor& mean, Tensor& rstd) {
    require(x.rank() == 2, "layer_norm: need 2-d input");
    require(gamma.numel() == static_cast<size_t>(x.cols()) &&
                beta.numel() == static_cast<size_t>(x.cols()),
            "layer_norm: gamma/beta size");
    mean = Tensor::zeros({x.rows()});
    rstd = Tensor::zeros({x.rows()});
    Tensor y = Tensor::zeros(x.shape);
    kern::layer_norm_forward(x.ptr(), gamma.ptr(), beta.ptr(), eps, y.ptr(), mean.ptr(), rstd.ptr(),
                             x.rows(), x.cols());
    return y;
}

void layer_norm_backward(const Tensor& x, const Tensor& gamma, const Tensor& mean, const Tensor& rstd,
                         const Tensor& dy, Tensor& dx, Tensor& dgamma, Tensor& dbeta) {
    require(x.same_shape(dx) && x.same_shape(dy), "layer_norm_backward: shape");
    kern::layer_norm_backward(x.ptr(), gamma.ptr(), mean.ptr(), rstd.ptr(), dy.ptr(), dx.ptr(),
                              dgamma.ptr(), dbeta.ptr(), x.rows(), x.cols());
}

Tensor softmax_rows(const Tensor& x) {
    require(x.rank() == 2, "softmax_rows: need 2-d input");
    Tensor p = Tensor::zeros(x.shape);
    kern::softmax_rows_forward(x.ptr(), p.ptr(), x.rows(), x.cols());
    return p;
}

void softmax_rows_backward(const Tensor& p, const Tensor& dy, Tensor& dx) {
    require(dy.same_shape(p) && dx.same_shape(p), "softmax_rows_backward: shape");
    kern::softmax_rows_backward(p.ptr(), dy.ptr(), dx.ptr(), p.rows(), p.cols());
}

Tensor embedding_gather(const Tensor& table, const std::vector<int32_t>& ids) {
    require(table.rank() == 2, "embedding_gather: table must be 2-d");
    for (int32_t id : ids)
        if (id < 0 || id >= table.rows())
            throw IndexError("embedding_gather: id " + std::to_string(id) + " out of range for " +
                             std::to_string(table.rows()) + " rows");
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), table.cols()});
    kern::embedding_gather(table.ptr(), ids.data(), out.ptr(), static_cast<int>(ids.size()), table.cols());
    return out;
}

void embedding_backward(const Tensor& dout, const std::vector<int32_t>& ids, Tensor& dtable) {
    require(dout.rows() == static_cast<int>(ids.size()) && dout.cols() == dtable.cols(),
            "embedding_backward: shape");
    kern::embedding_scatter_acc(dout.ptr(), ids.data(), dtable.ptr(), static_cast<int>(ids.size()),
                                dtable.rows(), dtable.cols());
}

double masked_cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets, Tensor& dlogits) {
    require(logits.rank() == 2, "masked_cross_entropy: logits must be 2-d");
    require(static_cast<int>(targets.size()) == logits.rows(), "masked_cross_entropy: targets size");
    require(logits.same_shape(dlogits), "masked_cross_entropy: dlogits shape");
    const int m = logits.rows(), n = logits.cols();
    int64_t counted = 0;
    for (int32_t t : targets) {
        if (t >= n) throw IndexError("masked_cross_entropy: target out of range");
        if (t >= 0) ++counted;
    }
    if (counted == 0) throw NumericError("masked_cross_entropy: no scored positions");
    const double inv = 1.0 / static_cast<double>(counted);
    double loss = 0.0;
#pragma omp parallel for schedule(static) reduction(+ : loss)
    for (int i = 0; i < m; ++i) {
        const float* row = logits.ptr() + static_cast<size_t>(i) * n;
        float* drow = dlogits.ptr() + static_cast<size_t>(i) * n;
        const int32_t t = targets[static_cast<size_t>(i)];
        if (t < 0) {
            for (int j = 0; j < n; ++j) drow[j] = 0.0f;
            continue;
        }
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = row[j] > mx ? row[j] : mx;
        double sum = 0.0;
        for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        const double lse = mx + std::log(sum);
        loss += (lse - row[t]) * inv;
        for (int j = 0; j < n; ++j) {
            double p = std::exp(static_cast<double>(row[j]) - lse);
            drow[j] = static_cast<float>((p - (j == t ? 1.0 : 0.0)) * inv);
        }
    }
    if (!std::isfinite(loss)) throw NumericError("masked_cross_entropy: non-finite loss");
    return loss;
}

double kd_kl_loss(const Tensor& teacher_logits, const Tensor& student_logits, float tau,
                  const std::vector<uint8_t>& select, Tensor& dlogits_student) {
    require(student_logits.same_shape(teacher_logits), "kd_kl_loss: logits shape");
    require(student_logits.same_shape(dlogits_student), "kd_kl_loss: dlogits shape");
    require(select.empty() || static_cast<int>(select.size()) == student_logits.rows(),
            "kd_kl_loss: select size");
    if (tau <= 0.0f) throw ConfigError("kd_kl_loss: temperature must be positive");
    const int m = student_logits.rows(), n = student_logits.cols();
    int64_t counted = 0;
    for (int i = 0; i < m; ++i)
        if (select.empty() || select[static_cast<size_t>(i)]) ++counted;
    if (counted == 0) throw NumericError("kd_kl_loss: no scored positions");
    const double inv = 1.0 / static_cast<double>(counted);
    const double itau = 1.0 / tau;
    double loss = 0.0;
#pragma omp parallel
    {
        std::vector<double> pt(static_cast<size_t>(n)), ps(static_cast<size_t>(n));
#pragma omp for schedule(static) reduction(+ : loss)
        for (int i = 0; i < m; ++i) {
            float* drow = dlogits_student.ptr() + static_cast<size_t>(i) * n;
            if (!select.empty() && !select[static_cast<size_t>(i)]) {
                for (int j = 0; j < n; ++j) drow[j] = 0.0f;
                continue;
            }
            const float* trow = teacher_logits.ptr() + static_cast<size_t>(i) * n;
            const float* srow = student_logits.ptr() + static_cast<size_t>(i) * n;
            double tmx = -1e30, smx = -1e30;
            for (int j = 0; j < n; ++j) {
                if (trow[j] * itau > tmx) tmx = trow[j] * itau;
                if (srow[j] * itau > smx) smx = srow[j] * itau;
            }
            double tsum = 0.0, ssum = 0.0;
            for (int j = 0; j < n; ++j) {
                pt[static_cast<size_t>(j)] = std::exp(trow[j] * itau - tmx);
                ps[static_cast<size_t>(j)] = std::exp(srow[j] * itau - smx);
                tsum += pt[static_cast<size_t>(j)];
                ssum += ps[static_cast<size_t>(j)];
            }
            double row_loss = 0.0;
            for (int j = 0; j < n; ++j) {
                const double ptj = pt[static_cast<size_t>(j)] / tsum;
                const double psj = ps[static_cast<size_t>(j)] / ssum;
                if (ptj > 0.0) row_loss += ptj * (std::log(ptj) - std::log(psj));
                drow[j] = static_cast<float>((psj - ptj) * itau * inv);
            }
            loss += row_loss * inv;
        }
    }
    if (!std::isfinite(loss)) throw NumericError("kd_kl_loss: non-finite loss");
    return loss;
}

FdResult finite_difference_check(const std::function<double(const Tensor&)>& f,
                                 const Tensor& x, const Tensor& analytic,
                                 double h, int max_elems) {
    if (!analytic.same_shape(x)) throw DimError("finite_difference_check: gradient shape");
    FdResult res;
    Tensor probe = x;
    const int64_t total = x.numel();
    const int64_t limit = (max_elems > 0 && max_elems < total) ? max_elems : total;
    // deterministic stride so a truncated check still covers the tensor
    const int64_t stride = total / limit > 0 ? total / limit : 1;
    for (int64_t i = 0; i < total && res.checked < limit; i += stride) {
        const float orig = probe.data[static_cast<size_t>(i)];
        probe.data[static_cast<size_t>(i)] = static_cast<float>(orig + h);
        const double fp = f(probe);
        probe.data[static_cast<size_t>(i)] = static_cast<float>(orig - h);
        const double fm = f(probe);
        probe.data[static_cast<size_t>(i)] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = std::fabs(analytic.data[static_cast<size_t>(i)] - numeric) /
                           std::max(1.0, std::fabs(numeric));
        if (rel > res.max_rel_err) res.max_rel_err = rel;
        ++res.checked;
    }
    return res;
}

}  // namespace wid::ops
