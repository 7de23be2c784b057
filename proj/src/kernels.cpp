// SPDX-License-Identifier: Apache-2.0

#include "dmoe/kernels.hpp"

#include <cmath>

namespace dmoe {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require_2d(const Tensor& t, const char* what) {
    if (t.ndim() != 2) throw ShapeError(std::string(what) + ": expected a 2D tensor, got " + shape_string(t));
}

}  // namespace

Tensor slice_rows(const Tensor& t, std::int64_t row_begin, std::int64_t row_end) {
    require_2d(t, "slice_rows");
    if (row_begin < 0 || row_end < row_begin || row_end > t.rows()) {
        throw BoundsError("slice_rows: range out of bounds");
    }
    const std::int64_t c = t.cols();
    Tensor out = Tensor::zeros({row_end - row_begin, c});
    std::copy(t.data.begin() + row_begin * c, t.data.begin() + row_end * c, out.data.begin());
    return out;
}

Tensor vstack(const Tensor& a, const Tensor& b) {
    require_2d(a, "vstack");
    require_2d(b, "vstack");
    if (a.cols() != b.cols()) throw ShapeError("vstack: column counts differ");
    Tensor out = Tensor::zeros({a.rows() + b.rows(), a.cols()});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_string(a) + " vs " + shape_string(b));
    }
    const std::int64_t m = a.rows(), kk = a.cols(), n = b.cols();
    Tensor y = Tensor::zeros({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        double* yrow = &y.data[static_cast<std::size_t>(i * n)];
        for (std::int64_t k = 0; k < kk; ++k) {
            const double av = a.data[static_cast<std::size_t>(i * kk + k)];
            const double* brow = &b.data[static_cast<std::size_t>(k * n)];
            for (std::int64_t j = 0; j < n; ++j) {
                yrow[j] += av * brow[j];
            }
        }
    }
    return y;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: inner dimensions differ, " + shape_string(a) + " vs " +
                         shape_string(b));
    }
    const std::int64_t m = a.rows(), kk = a.cols(), n = b.rows();
    Tensor y = Tensor::zeros({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = &a.data[static_cast<std::size_t>(i * kk)];
        double* yrow = &y.data[static_cast<std::size_t>(i * n)];
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = &b.data[static_cast<std::size_t>(j * kk)];
            double acc = 0.0;
            for (std::int64_t k = 0; k < kk; ++k) acc += arow[k] * brow[k];
            yrow[j] = acc;
        }
    }
    return y;
}

void matmul_nt_backward(const Tensor& a, const Tensor& b, const Tensor& gy, Tensor& ga,
                        Tensor& gb) {
    const std::int64_t m = a.rows(), kk = a.cols(), n = b.rows();
    if (gy.rows() != m || gy.cols() != n || !ga.same_shape(a) || !gb.same_shape(b)) {
        throw ShapeError("matmul_nt_backward: gradient shape mismatch");
    }
    for (std::int64_t i = 0; i < m; ++i) {
        const double* gyrow = &gy.data[static_cast<std::size_t>(i * n)];
        const double* arow = &a.data[static_cast<std::size_t>(i * kk)];
        double* garow = &ga.data[static_cast<std::size_t>(i * kk)];
        for (std::int64_t j = 0; j < n; ++j) {
            const double g = gyrow[j];
            const double* brow = &b.data[static_cast<std::size_t>(j * kk)];
            double* gbrow = &gb.data[static_cast<std::size_t>(j * kk)];
            for (std::int64_t k = 0; k < kk; ++k) {
                garow[k] += g * brow[k];
                gbrow[k] += g * arow[k];
            }
        }
    }
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_2d(x, "affine");
    require_2d(w, "affine");
    if (x.cols() != w.rows()) {
        throw ShapeError("affine: input width " + std::to_string(x.cols()) + " vs weight rows " +
                         std::to_string(w.rows()));
    }
    if (b.numel() != w.cols()) {
        throw ShapeError("affine: bias length " + std::to_string(b.numel()) + " vs weight cols " +
                         std::to_string(w.cols()));
    }
    const std::int64_t m = x.rows(), kk = x.cols(), n = w.cols();
    Tensor y = Tensor::zeros({m, n});
    for (std::int64_t i = 0; i < m; ++i) {
        double* yrow = &y.data[static_cast<std::size_t>(i * n)];
        for (std::int64_t j = 0; j < n; ++j) yrow[j] = b.data[static_cast<std::size_t>(j)];
        for (std::int64_t k = 0; k < kk; ++k) {
            const double xv = x.data[static_cast<std::size_t>(i * kk + k)];
            const double* wrow = &w.data[static_cast<std::size_t>(k * n)];
            for (std::int64_t j = 0; j < n; ++j) {
                yrow[j] += xv * wrow[j];
            }
        }
    }
    return y;
}

void affine_backward(const Tensor& x, const Tensor& w, const Tensor& gy, Tensor& gx, Tensor& gw,
                     Tensor& gb) {
    const std::int64_t m = x.rows(), kk = x.cols(), n = w.cols();
    if (gy.rows() != m || gy.cols() != n) throw ShapeError("affine_backward: bad upstream shape");
    // gx += gy @ W^T
    for (std::int64_t i = 0; i < m; ++i) {
        const double* gyrow = &gy.data[static_cast<std::size_t>(i * n)];
        double* gxrow = &gx.data[static_cast<std::size_t>(i * kk)];
        for (std::int64_t k = 0; k < kk; ++k) {
            const double* wrow = &w.data[static_cast<std::size_t>(k * n)];
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) acc += gyrow[j] * wrow[j];
            gxrow[k] += acc;
        }
    }
    // gW += x^T @ gy
    for (std::int64_t i = 0; i < m; ++i) {
        const double* xrow = &x.data[static_cast<std::size_t>(i * kk)];
        const double* gyrow = &gy.data[static_cast<std::size_t>(i * n)];
        for (std::int64_t k = 0; k < kk; ++k) {
            double* gwrow = &gw.data[static_cast<std::size_t>(k * n)];
            const double xv = xrow[k];
            for (std::int64_t j = 0; j < n; ++j) gwrow[j] += xv * gyrow[j];
        }
    }
    // gb += column sums of gy
    for (std::int64_t i = 0; i < m; ++i) {
        const double* gyrow = &gy.data[static_cast<std::size_t>(i * n)];
        for (std::int64_t j = 0; j < n; ++j) gb.data[static_cast<std::size_t>(j)] += gyrow[j];
    }
}

Tensor gelu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) {
        v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    return y;
}

void gelu_backward(const Tensor& x, const Tensor& gy, Tensor& gx) {
    if (!x.same_shape(gy) || !x.same_shape(gx)) throw ShapeError("gelu_backward: shape mismatch");
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double v = x.data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx.data[i] += gy.data[i] * (cdf + v * pdf);
    }
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache) {
    require_2d(x, "layer_norm");
    const std::int64_t n = x.rows(), d = x.cols();
    if (gamma.numel() != d || beta.numel() != d) throw ShapeError("layer_norm: scale/shift length mismatch");
    Tensor y = Tensor::zeros({n, d});
    Tensor xhat = Tensor::zeros({n, d});
    std::vector<double> inv_std(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = &x.data[static_cast<std::size_t>(i * d)];
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[static_cast<std::size_t>(i)] = inv;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * inv;
            xhat.at(i, j) = h;
            y.at(i, j) = gamma.data[static_cast<std::size_t>(j)] * h + beta.data[static_cast<std::size_t>(j)];
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

void layer_norm_backward(const LayerNormCache& cache, const Tensor& gamma, const Tensor& gy,
                         Tensor& gx, Tensor& ggamma, Tensor& gbeta) {
    const std::int64_t n = cache.xhat.rows(), d = cache.xhat.cols();
    if (gy.rows() != n || gy.cols() != d) throw ShapeError("layer_norm_backward: bad upstream shape");
    for (std::int64_t i = 0; i < n; ++i) {
        const double inv = cache.inv_std[static_cast<std::size_t>(i)];
        double sum_h = 0.0, sum_hx = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = gy.at(i, j) * gamma.data[static_cast<std::size_t>(j)];
            sum_h += h;
            sum_hx += h * cache.xhat.at(i, j);
        }
        const double mean_h = sum_h / static_cast<double>(d);
        const double mean_hx = sum_hx / static_cast<double>(d);
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = gy.at(i, j) * gamma.data[static_cast<std::size_t>(j)];
            gx.at(i, j) += inv * (h - mean_h - cache.xhat.at(i, j) * mean_hx);
            ggamma.data[static_cast<std::size_t>(j)] += gy.at(i, j) * cache.xhat.at(i, j);
            gbeta.data[static_cast<std::size_t>(j)] += gy.at(i, j);
        }
    }
}

Tensor softmax(const Tensor& x) {
    require_2d(x, "softmax");
    const std::int64_t n = x.rows(), d = x.cols();
    Tensor y = Tensor::zeros({n, d});
    for (std::int64_t i = 0; i < n; ++i) {
        double mx = x.at(i, 0);
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, x.at(i, j));
        double denom = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double e = std::exp(x.at(i, j) - mx);
            y.at(i, j) = e;
            denom += e;
        }
        for (std::int64_t j = 0; j < d; ++j) y.at(i, j) /= denom;
    }
    return y;
}

void softmax_backward(const Tensor& y, const Tensor& gy, Tensor& gx) {
    const std::int64_t n = y.rows(), d = y.cols();
    if (gy.rows() != n || gy.cols() != d) throw ShapeError("softmax_backward: bad upstream shape");
    for (std::int64_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += gy.at(i, j) * y.at(i, j);
        for (std::int64_t j = 0; j < d; ++j) gx.at(i, j) += y.at(i, j) * (gy.at(i, j) - dot);
    }
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                 AttentionCache* cache) {
    require_2d(q, "attention");
    require_2d(k, "attention");
    require_2d(v, "attention");
    if (q.cols() != k.cols()) throw ShapeError("attention: q/k width mismatch");
    if (k.rows() != v.rows()) throw ShapeError("attention: k/v length mismatch");
    if (causal && q.rows() != k.rows()) throw ShapeError("attention: causal mask needs square scores");
    const std::int64_t tq = q.rows(), tk = k.rows(), dh = q.cols(), dv = v.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor probs = Tensor::zeros({tq, tk});
    for (std::int64_t i = 0; i < tq; ++i) {
        const std::int64_t limit = causal ? i + 1 : tk;
        double mx = -1e300;
        for (std::int64_t j = 0; j < limit; ++j) {
            double s = 0.0;
            for (std::int64_t c = 0; c < dh; ++c) s += q.at(i, c) * k.at(j, c);
            s *= scale;
            probs.at(i, j) = s;
            mx = std::max(mx, s);
        }
        double denom = 0.0;
        for (std::int64_t j = 0; j < limit; ++j) {
            const double e = std::exp(probs.at(i, j) - mx);
            probs.at(i, j) = e;
            denom += e;
        }
        for (std::int64_t j = 0; j < limit; ++j) probs.at(i, j) /= denom;
    }

    Tensor y = Tensor::zeros({tq, dv});
    for (std::int64_t i = 0; i < tq; ++i) {
        const std::int64_t limit = causal ? i + 1 : tk;
        for (std::int64_t j = 0; j < limit; ++j) {
            const double p = probs.at(i, j);
            for (std::int64_t c = 0; c < dv; ++c) y.at(i, c) += p * v.at(j, c);
        }
    }
    if (cache) cache->probs = std::move(probs);
    return y;
}

void attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, bool causal,
                        const AttentionCache& cache, const Tensor& gy, Tensor& gq, Tensor& gk,
                        Tensor& gv) {
    const std::int64_t tq = q.rows(), tk = k.rows(), dh = q.cols(), dv = v.cols();
    if (gy.rows() != tq || gy.cols() != dv) throw ShapeError("attention_backward: bad upstream shape");
    const Tensor& probs = cache.probs;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (std::int64_t i = 0; i < tq; ++i) {
        const std::int64_t limit = causal ? i + 1 : tk;
        // gv[j] += p[i][j] * gy[i]
        for (std::int64_t j = 0; j < limit; ++j) {
            const double p = probs.at(i, j);
            for (std::int64_t c = 0; c < dv; ++c) gv.at(j, c) += p * gy.at(i, c);
        }
        // gp[i][j] = gy[i] . v[j], then softmax backward within the row
        std::vector<double> gp(static_cast<std::size_t>(limit));
        double dot = 0.0;
        for (std::int64_t j = 0; j < limit; ++j) {
            double acc = 0.0;
            for (std::int64_t c = 0; c < dv; ++c) acc += gy.at(i, c) * v.at(j, c);
            gp[static_cast<std::size_t>(j)] = acc;
            dot += acc * probs.at(i, j);
        }
        for (std::int64_t j = 0; j < limit; ++j) {
            const double gs = probs.at(i, j) * (gp[static_cast<std::size_t>(j)] - dot) * scale;
            for (std::int64_t c = 0; c < dh; ++c) {
                gq.at(i, c) += gs * k.at(j, c);
                gk.at(j, c) += gs * q.at(i, c);
            }
        }
    }
}

double cross_entropy(const Tensor& logits, const std::vector<std::int32_t>& targets,
                     const std::vector<std::uint8_t>& mask, CrossEntropyCache* cache) {
    require_2d(logits, "cross_entropy");
    const std::int64_t n = logits.rows(), vocab = logits.cols();
    if (targets.size() != static_cast<std::size_t>(n) || mask.size() != static_cast<std::size_t>(n)) {
        throw ShapeError("cross_entropy: targets/mask length mismatch");
    }
    Tensor probs = softmax(logits);
    std::int64_t count = 0;
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const std::int32_t t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= vocab) throw BoundsError("cross_entropy: target out of range");
        ++count;
        total += -std::log(probs.at(i, t));
    }
    if (count == 0) throw DegenerateBatchError("cross_entropy: every position is masked");
    if (cache) {
        cache->probs = std::move(probs);
        cache->count = count;
    }
    return total / static_cast<double>(count);
}

void cross_entropy_backward(const CrossEntropyCache& cache,
                            const std::vector<std::int32_t>& targets,
                            const std::vector<std::uint8_t>& mask, double gloss, Tensor& glogits) {
    const std::int64_t n = cache.probs.rows(), vocab = cache.probs.cols();
    if (glogits.rows() != n || glogits.cols() != vocab) {
        throw ShapeError("cross_entropy_backward: bad gradient shape");
    }
    const double inv = gloss / static_cast<double>(cache.count);
    for (std::int64_t i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const std::int32_t t = targets[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < vocab; ++j) {
            glogits.at(i, j) += inv * (cache.probs.at(i, j) - (j == t ? 1.0 : 0.0));
        }
    }
}

}  // namespace dmoe
