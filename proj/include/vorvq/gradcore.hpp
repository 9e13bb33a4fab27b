#pragma once

// Minimal reverse-mode tape over matrix-valued nodes.
//
// The op set is exactly what the training objective needs: affine pieces
// (matmul + row-vector bias), elementwise arithmetic, reductions, row
// L2-normalization, log-sum-exp, windowed DFT magnitudes, stop-gradient and
// the straight-through quantizer. Tape construction and backward are
// single-threaded; the heavy per-op arithmetic runs on the kernels module.

#include <functional>
#include <memory>
#include <vector>

#include "vorvq/kernels.hpp"
#include "vorvq/mat.hpp"

namespace vorvq::grad {

enum class Op {
    kLeaf,
    kConstant,
    kAdd,
    kAddRowVec,
    kSub,
    kHadamard,
    kScale,
    kSquare,
    kAbs,
    kMatMul,
    kMatMulNT,
    kSum,
    kMean,
    kL2NormalizeRows,
    kLogSumExpRows,
    kTakeDiag,
    kStopGrad,
    kTruncateCols,
    kPadCols,
    kGatherRows,
    kSteQuantize,
    kStftMag,
    kFlattenRows,
};

struct Node {
    Op op = Op::kLeaf;
    Mat value;
    Mat grad;
    bool needs_grad = false;
    int a = -1;
    int b = -1;
    double scalar = 0.0;
    int dim = 0;
    std::vector<int> indices;  // gather rows / quantizer codes
    std::shared_ptr<kernels::StftPlan> plan;
    std::vector<double> padded;  // cached padded waveform for the DFT adjoint
    size_t wave_len = 0;
};

class Tape {
  public:
    int leaf(Mat v);      // trainable parameter
    int constant(Mat v);  // data / frozen tensors, receives no gradient

    int add(int a, int b);
    int add_rowvec(int a, int b);  // b is 1 x cols, broadcast over rows
    int sub(int a, int b);
    int hadamard(int a, int b);
    int scale(int a, double s);
    int square(int a);
    int abs(int a);
    int matmul(int a, int b);
    int matmul_nt(int a, int b);  // A * B^T
    int sum(int a);
    int mean(int a);
    int l2_normalize_rows(int a);
    int logsumexp_rows(int a);  // rows x 1
    int take_diag(int a);       // square input, rows x 1
    int stop_grad(int a);
    int truncate_cols(int a, int d);
    int pad_cols(int a, int d_full);
    int gather_rows(int a, std::vector<int> rows);
    // forward: per-row nearest row of value(codebook); backward: upstream
    // gradient passes unchanged to `a`, none to the codebook
    int ste_quantize(int a, int codebook);
    int stft_mag(int a, int n_fft, int hop);  // a is a 1 x L waveform
    int flatten_rows(int a);

    // x*W + b convenience; returns the matmul+bias result node
    int affine(int x, int w, int b) { return add_rowvec(matmul(x, w), b); }

    // returned references point into the node store and go stale as soon
    // as another op is recorded; copy what outlives the next append
    const Mat& value(int id) const { return nodes_[id].value; }
    const Mat& gradient(int id) const;
    const std::vector<int>& codes(int id) const;
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    size_t size() const { return nodes_.size(); }

    // reverse pass from a scalar output; fills gradients of every node that
    // needs one
    void backward(int output);

  private:
    int push(Node n);
    std::vector<Node> nodes_;
};

// max relative error between the analytic gradient and central finite
// differences of `f` around `point`
double fd_check(const std::function<double(const Mat&)>& f, const Mat& point,
                const Mat& analytic_grad, double eps = 1e-6);

// SGD: param -= lr * grad
void apply_sgd(Mat& param, const Mat& grad, double lr);

}  // namespace vorvq::grad
