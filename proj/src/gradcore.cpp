#include "vorvq/gradcore.hpp"

#include <algorithm>
#include <cmath>

namespace vorvq::grad {

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

namespace {

void check_same_shape(const Mat& a, const Mat& b, const char* what) {
    VORVQ_CHECK(a.same_shape(b), std::string(what) + ": shape mismatch");
}

}  // namespace

int Tape::leaf(Mat v) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(v);
    n.needs_grad = true;
    return push(std::move(n));
}

int Tape::constant(Mat v) {
    Node n;
    n.op = Op::kConstant;
    n.value = std::move(v);
    n.needs_grad = false;
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    check_same_shape(nodes_[a].value, nodes_[b].value, "add");
    Node n;
    n.op = Op::kAdd;
    n.a = a;
    n.b = b;
    n.value = nodes_[a].value;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += nodes_[b].value.data[i];
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(n));
}

int Tape::add_rowvec(int a, int b) {
    const Mat& va = nodes_[a].value;
    const Mat& vb = nodes_[b].value;
    VORVQ_CHECK(vb.rows == 1 && vb.cols == va.cols, "add_rowvec: bias must be 1 x cols");
    Node n;
    n.op = Op::kAddRowVec;
    n.a = a;
    n.b = b;
    n.value = va;
    for (int r = 0; r < va.rows; ++r) {
        double* row = n.value.row(r);
        for (int c = 0; c < va.cols; ++c) row[c] += vb(0, c);
    }
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    check_same_shape(nodes_[a].value, nodes_[b].value, "sub");
    Node n;
    n.op = Op::kSub;
    n.a = a;
    n.b = b;
    n.value = nodes_[a].value;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= nodes_[b].value.data[i];
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(n));
}

int Tape::hadamard(int a, int b) {
    check_same_shape(nodes_[a].value, nodes_[b].value, "hadamard");
    Node n;
    n.op = Op::kHadamard;
    n.a = a;
    n.b = b;
    n.value = nodes_[a].value;
    for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= nodes_[b].value.data[i];
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(n));
}

int Tape::scale(int a, double s) {
    Node n;
    n.op = Op::kScale;
    n.a = a;
    n.scalar = s;
    n.value = nodes_[a].value;
    for (double& x : n.value.data) x *= s;
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::square(int a) {
    Node n;
    n.op = Op::kSquare;
    n.a = a;
    n.value = nodes_[a].value;
    for (double& x : n.value.data) x *= x;
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::abs(int a) {
    Node n;
    n.op = Op::kAbs;
    n.a = a;
    n.value = nodes_[a].value;
    for (double& x : n.value.data) x = std::fabs(x);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::matmul(int a, int b) {
    Node n;
    n.op = Op::kMatMul;
    n.a = a;
    n.b = b;
    kernels::matmul(nodes_[a].value, nodes_[b].value, n.value);
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(n));
}

int Tape::matmul_nt(int a, int b) {
    Node n;
    n.op = Op::kMatMulNT;
    n.a = a;
    n.b = b;
    kernels::matmul_nt(nodes_[a].value, nodes_[b].value, n.value);
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    return push(std::move(n));
}

int Tape::sum(int a) {
    Node n;
    n.op = Op::kSum;
    n.a = a;
    double acc = 0.0;
    for (double x : nodes_[a].value.data) acc += x;
    n.value = Mat(1, 1, acc);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::mean(int a) {
    VORVQ_CHECK(nodes_[a].value.numel() > 0, "mean: empty input");
    Node n;
    n.op = Op::kMean;
    n.a = a;
    double acc = 0.0;
    for (double x : nodes_[a].value.data) acc += x;
    n.value = Mat(1, 1, acc / static_cast<double>(nodes_[a].value.numel()));
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::l2_normalize_rows(int a) {
    const Mat& va = nodes_[a].value;
    Node n;
    n.op = Op::kL2NormalizeRows;
    n.a = a;
    n.value = Mat(va.rows, va.cols);
    for (int r = 0; r < va.rows; ++r) {
        const double* x = va.row(r);
        double norm2 = 0.0;
        for (int c = 0; c < va.cols; ++c) norm2 += x[c] * x[c];
        VORVQ_CHECK(norm2 > 0.0, "l2_normalize: zero row");
        const double inv = 1.0 / std::sqrt(norm2);
        double* y = n.value.row(r);
        for (int c = 0; c < va.cols; ++c) y[c] = x[c] * inv;
    }
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::logsumexp_rows(int a) {
    const Mat& va = nodes_[a].value;
    Node n;
    n.op = Op::kLogSumExpRows;
    n.a = a;
    n.value = Mat(va.rows, 1);
    for (int r = 0; r < va.rows; ++r) {
        const double* x = va.row(r);
        double m = x[0];
        for (int c = 1; c < va.cols; ++c) m = std::max(m, x[c]);
        double acc = 0.0;
        for (int c = 0; c < va.cols; ++c) acc += std::exp(x[c] - m);
        n.value(r, 0) = m + std::log(acc);
    }
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::take_diag(int a) {
    const Mat& va = nodes_[a].value;
    VORVQ_CHECK(va.rows == va.cols, "take_diag: input not square");
    Node n;
    n.op = Op::kTakeDiag;
    n.a = a;
    n.value = Mat(va.rows, 1);
    for (int r = 0; r < va.rows; ++r) n.value(r, 0) = va(r, r);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::stop_grad(int a) {
    Node n;
    n.op = Op::kStopGrad;
    n.a = a;
    n.value = nodes_[a].value;
    n.needs_grad = false;
    return push(std::move(n));
}

int Tape::truncate_cols(int a, int d) {
    const Mat& va = nodes_[a].value;
    VORVQ_CHECK(d >= 1 && d <= va.cols, "truncate_cols: bad width");
    Node n;
    n.op = Op::kTruncateCols;
    n.a = a;
    n.dim = d;
    n.value = Mat(va.rows, d);
    for (int r = 0; r < va.rows; ++r) std::copy(va.row(r), va.row(r) + d, n.value.row(r));
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::pad_cols(int a, int d_full) {
    const Mat& va = nodes_[a].value;
    VORVQ_CHECK(d_full >= va.cols, "pad_cols: target narrower than input");
    Node n;
    n.op = Op::kPadCols;
    n.a = a;
    n.dim = va.cols;
    n.value = Mat(va.rows, d_full);
    for (int r = 0; r < va.rows; ++r) std::copy(va.row(r), va.row(r) + va.cols, n.value.row(r));
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::gather_rows(int a, std::vector<int> rows) {
    const Mat& va = nodes_[a].value;
    Node n;
    n.op = Op::kGatherRows;
    n.a = a;
    n.value = Mat(static_cast<int>(rows.size()), va.cols);
    for (size_t t = 0; t < rows.size(); ++t) {
        VORVQ_CHECK(rows[t] >= 0 && rows[t] < va.rows, "gather_rows: index out of range");
        std::copy(va.row(rows[t]), va.row(rows[t]) + va.cols, n.value.row(static_cast<int>(t)));
    }
    n.indices = std::move(rows);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::ste_quantize(int a, int codebook) {
    const Mat& va = nodes_[a].value;
    const Mat& cb = nodes_[codebook].value;
    VORVQ_CHECK(va.cols == cb.cols, "ste_quantize: dimension mismatch");
    VORVQ_CHECK(all_finite(va), "ste_quantize: non-finite input");
    Node n;
    n.op = Op::kSteQuantize;
    n.a = a;
    n.b = codebook;
    n.indices.resize(va.rows);
    std::vector<double> dists(va.rows);
    kernels::nearest_rows(va, cb, n.indices.data(), dists.data());
    n.value = Mat(va.rows, va.cols);
    for (int t = 0; t < va.rows; ++t)
        std::copy(cb.row(n.indices[t]), cb.row(n.indices[t]) + cb.cols, n.value.row(t));
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::stft_mag(int a, int n_fft, int hop) {
    const Mat& va = nodes_[a].value;
    VORVQ_CHECK(va.rows == 1, "stft_mag: waveform must be a single row");
    VORVQ_CHECK(va.cols >= n_fft, "stft_mag: waveform shorter than n_fft");
    Node n;
    n.op = Op::kStftMag;
    n.a = a;
    n.plan = std::make_shared<kernels::StftPlan>(kernels::make_stft_plan(n_fft, hop));
    n.wave_len = static_cast<size_t>(va.cols);
    std::vector<double> wave(va.row(0), va.row(0) + va.cols);
    n.padded = kernels::reflect_pad(wave, n_fft / 2);
    const int frames = kernels::stft_frame_count(*n.plan, wave.size());
    n.value = Mat(n.plan->n_bins, frames);
    kernels::stft_mag_frames(*n.plan, n.padded, n.value);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

int Tape::flatten_rows(int a) {
    const Mat& va = nodes_[a].value;
    Node n;
    n.op = Op::kFlattenRows;
    n.a = a;
    n.dim = va.cols;
    n.value = Mat(1, static_cast<int>(va.numel()));
    std::copy(va.data.begin(), va.data.end(), n.value.data.begin());
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

const Mat& Tape::gradient(int id) const {
    VORVQ_CHECK(nodes_[id].grad.numel() > 0, "gradient: run backward first");
    return nodes_[id].grad;
}

const std::vector<int>& Tape::codes(int id) const {
    VORVQ_CHECK(nodes_[id].op == Op::kSteQuantize || nodes_[id].op == Op::kGatherRows,
                "codes: node records no indices");
    return nodes_[id].indices;
}

void Tape::backward(int output) {
    VORVQ_CHECK(output >= 0 && output < static_cast<int>(nodes_.size()), "backward: bad node id");
    const Mat& out = nodes_[output].value;
    VORVQ_CHECK(out.rows == 1 && out.cols == 1, "backward: output must be scalar");

    for (Node& n : nodes_)
        if (n.needs_grad) n.grad = Mat(n.value.rows, n.value.cols);
    if (!nodes_[output].needs_grad) return;  // constant graph, nothing to do
    nodes_[output].grad(0, 0) = 1.0;

    for (int id = output; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.grad.numel() == 0) continue;
        const Mat& g = n.grad;
        auto wants = [&](int in) { return in >= 0 && nodes_[in].needs_grad; };

        switch (n.op) {
            case Op::kLeaf:
            case Op::kConstant:
            case Op::kStopGrad:
                break;
            case Op::kAdd:
                if (wants(n.a))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += g.data[i];
                if (wants(n.b))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.b].grad.data[i] += g.data[i];
                break;
            case Op::kAddRowVec:
                if (wants(n.a))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += g.data[i];
                if (wants(n.b)) {
                    Mat& gb = nodes_[n.b].grad;
                    for (int r = 0; r < g.rows; ++r) {
                        const double* grow = g.row(r);
                        for (int c = 0; c < g.cols; ++c) gb(0, c) += grow[c];
                    }
                }
                break;
            case Op::kSub:
                if (wants(n.a))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += g.data[i];
                if (wants(n.b))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.b].grad.data[i] -= g.data[i];
                break;
            case Op::kHadamard:
                if (wants(n.a))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += g.data[i] * nodes_[n.b].value.data[i];
                if (wants(n.b))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.b].grad.data[i] += g.data[i] * nodes_[n.a].value.data[i];
                break;
            case Op::kScale:
                if (wants(n.a))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += n.scalar * g.data[i];
                break;
            case Op::kSquare:
                if (wants(n.a))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += 2.0 * nodes_[n.a].value.data[i] * g.data[i];
                break;
            case Op::kAbs:
                if (wants(n.a))
                    for (size_t i = 0; i < g.data.size(); ++i) {
                        const double x = nodes_[n.a].value.data[i];
                        const double s = (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                        nodes_[n.a].grad.data[i] += s * g.data[i];
                    }
                break;
            case Op::kMatMul: {
                if (wants(n.a)) {
                    Mat da;
                    kernels::matmul_nt(g, nodes_[n.b].value, da);
                    for (size_t i = 0; i < da.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += da.data[i];
                }
                if (wants(n.b)) {
                    Mat db;
                    kernels::matmul_tn(nodes_[n.a].value, g, db);
                    for (size_t i = 0; i < db.data.size(); ++i)
                        nodes_[n.b].grad.data[i] += db.data[i];
                }
                break;
            }
            case Op::kMatMulNT: {
                if (wants(n.a)) {
                    Mat da;
                    kernels::matmul(g, nodes_[n.b].value, da);
                    for (size_t i = 0; i < da.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += da.data[i];
                }
                if (wants(n.b)) {
                    Mat db;
                    kernels::matmul_tn(g, nodes_[n.a].value, db);
                    for (size_t i = 0; i < db.data.size(); ++i)
                        nodes_[n.b].grad.data[i] += db.data[i];
                }
                break;
            }
            case Op::kSum:
                if (wants(n.a)) {
                    const double s = g(0, 0);
                    for (double& x : nodes_[n.a].grad.data) x += s;
                }
                break;
            case Op::kMean:
                if (wants(n.a)) {
                    const double s = g(0, 0) / static_cast<double>(nodes_[n.a].value.numel());
                    for (double& x : nodes_[n.a].grad.data) x += s;
                }
                break;
            case Op::kL2NormalizeRows:
                if (wants(n.a)) {
                    const Mat& x = nodes_[n.a].value;
                    Mat& gx = nodes_[n.a].grad;
                    for (int r = 0; r < x.rows; ++r) {
                        const double* xr = x.row(r);
                        const double* yr = n.value.row(r);
                        const double* gr = g.row(r);
                        double norm2 = 0.0, dot = 0.0;
                        for (int c = 0; c < x.cols; ++c) {
                            norm2 += xr[c] * xr[c];
                            dot += gr[c] * yr[c];
                        }
                        const double inv = 1.0 / std::sqrt(norm2);
                        double* gxr = gx.row(r);
                        for (int c = 0; c < x.cols; ++c)
                            gxr[c] += (gr[c] - dot * yr[c]) * inv;
                    }
                }
                break;
            case Op::kLogSumExpRows:
                if (wants(n.a)) {
                    const Mat& x = nodes_[n.a].value;
                    Mat& gx = nodes_[n.a].grad;
                    for (int r = 0; r < x.rows; ++r) {
                        const double lse = n.value(r, 0);
                        const double gr = g(r, 0);
                        const double* xr = x.row(r);
                        double* gxr = gx.row(r);
                        for (int c = 0; c < x.cols; ++c)
                            gxr[c] += gr * std::exp(xr[c] - lse);
                    }
                }
                break;
            case Op::kTakeDiag:
                if (wants(n.a))
                    for (int r = 0; r < g.rows; ++r) nodes_[n.a].grad(r, r) += g(r, 0);
                break;
            case Op::kTruncateCols:
                if (wants(n.a)) {
                    Mat& ga = nodes_[n.a].grad;
                    for (int r = 0; r < g.rows; ++r) {
                        const double* grow = g.row(r);
                        double* garow = ga.row(r);
                        for (int c = 0; c < n.dim; ++c) garow[c] += grow[c];
                    }
                }
                break;
            case Op::kPadCols:
                if (wants(n.a)) {
                    Mat& ga = nodes_[n.a].grad;
                    for (int r = 0; r < g.rows; ++r) {
                        const double* grow = g.row(r);
                        double* garow = ga.row(r);
                        for (int c = 0; c < n.dim; ++c) garow[c] += grow[c];
                    }
                }
                break;
            case Op::kGatherRows:
                if (wants(n.a)) {
                    Mat& ga = nodes_[n.a].grad;
                    for (size_t t = 0; t < n.indices.size(); ++t) {
                        const double* grow = g.row(static_cast<int>(t));
                        double* garow = ga.row(n.indices[t]);
                        for (int c = 0; c < g.cols; ++c) garow[c] += grow[c];
                    }
                }
                break;
            case Op::kSteQuantize:
                // straight-through: identity to the continuous input, the
                // codebook leaf learns only through explicit loss terms
                if (wants(n.a))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += g.data[i];
                break;
            case Op::kStftMag:
                if (wants(n.a)) {
                    std::vector<double> dpadded, dwave;
                    kernels::stft_mag_adjoint(*n.plan, n.padded, n.value, g, dpadded);
                    kernels::reflect_pad_adjoint(dpadded, n.plan->n_fft / 2, n.wave_len, dwave);
                    Mat& ga = nodes_[n.a].grad;
                    for (size_t i = 0; i < dwave.size(); ++i) ga.data[i] += dwave[i];
                }
                break;
            case Op::kFlattenRows:
                if (wants(n.a))
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nodes_[n.a].grad.data[i] += g.data[i];
                break;
        }
    }
}

double fd_check(const std::function<double(const Mat&)>& f, const Mat& point,
                const Mat& analytic_grad, double eps) {
    VORVQ_CHECK(eps > 0.0, "fd_check: eps must be positive");
    VORVQ_CHECK(point.same_shape(analytic_grad), "fd_check: gradient shape mismatch");
    double max_rel = 0.0;
    Mat probe = point;
    for (size_t i = 0; i < point.data.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + eps;
        const double fp = f(probe);
        probe.data[i] = orig - eps;
        const double fm = f(probe);
        probe.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double analytic = analytic_grad.data[i];
        const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1.0});
        max_rel = std::max(max_rel, std::fabs(numeric - analytic) / denom);
    }
    return max_rel;
}

void apply_sgd(Mat& param, const Mat& grad, double lr) {
    VORVQ_CHECK(param.same_shape(grad), "sgd: gradient shape mismatch");
    for (size_t i = 0; i < param.data.size(); ++i) param.data[i] -= lr * grad.data[i];
}

}  // namespace vorvq::grad
