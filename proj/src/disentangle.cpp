#include "vorvq/disentangle.hpp"

#include <algorithm>
#include <cmath>

#include "vorvq/kernels.hpp"
#include "vorvq/quantizer.hpp"
#include "vorvq/rng.hpp"

namespace vorvq::disentangle {

namespace {

uint64_t subseed(uint64_t seed, uint64_t salt) {
    uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (salt + 1));
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    return x;
}

// deterministic sign: the largest-magnitude entry (lowest index on ties)
// is made positive
void fix_sign(double* v, int n) {
    int imax = 0;
    double amax = std::fabs(v[0]);
    for (int i = 1; i < n; ++i)
        if (std::fabs(v[i]) > amax) {
            amax = std::fabs(v[i]);
            imax = i;
        }
    if (v[imax] < 0.0)
        for (int i = 0; i < n; ++i) v[i] = -v[i];
}

}  // namespace

Mat build_affinity(const Mat& points) {
    VORVQ_CHECK(points.rows >= 2, "affinity: need at least two points");
    Mat sq;
    kernels::pairwise_sqdist(points, sq);

    std::vector<double> dists;
    dists.reserve(static_cast<size_t>(points.rows) * (points.rows - 1) / 2);
    for (int i = 0; i < points.rows; ++i)
        for (int j = i + 1; j < points.rows; ++j) dists.push_back(std::sqrt(sq(i, j)));

    const size_t n = dists.size();
    double sigma;
    if (n % 2 == 1) {
        std::nth_element(dists.begin(), dists.begin() + n / 2, dists.end());
        sigma = dists[n / 2];
    } else {
        std::nth_element(dists.begin(), dists.begin() + n / 2, dists.end());
        const double hi = dists[n / 2];
        std::nth_element(dists.begin(), dists.begin() + (n / 2 - 1), dists.begin() + n / 2);
        sigma = 0.5 * (dists[n / 2 - 1] + hi);
    }
    VORVQ_CHECK(sigma > 0.0, "affinity: all points identical, bandwidth is zero");

    const double inv = 1.0 / (2.0 * sigma * sigma);
    Mat w(points.rows, points.rows);
    for (int i = 0; i < points.rows; ++i)
        for (int j = 0; j < points.rows; ++j)
            w(i, j) = (i == j) ? 0.0 : std::exp(-sq(i, j) * inv);
    return w;
}

void jacobi_eigh(const Mat& sym, std::vector<double>& eigenvalues, Mat& eigenvectors) {
    VORVQ_CHECK(sym.rows == sym.cols, "jacobi: matrix not square");
    const int n = sym.rows;
    Mat a = sym;
    Mat v = Mat::identity(n);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-26) break;

        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0.0)
                                     ? 1.0 / (theta + std::sqrt(1.0 + theta * theta))
                                     : 1.0 / (theta - std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        if (a(x, x) != a(y, y)) return a(x, x) < a(y, y);
        return x < y;
    });
    eigenvalues.resize(n);
    eigenvectors = Mat(n, n);
    std::vector<double> col(n);
    for (int j = 0; j < n; ++j) {
        eigenvalues[j] = a(order[j], order[j]);
        for (int i = 0; i < n; ++i) col[i] = v(i, order[j]);
        fix_sign(col.data(), n);
        for (int i = 0; i < n; ++i) eigenvectors(i, j) = col[i];
    }
}

namespace {

// symmetric normalized affinity D^{-1/2} W D^{-1/2}
Mat normalized_affinity(const Mat& w, std::vector<double>& inv_sqrt_deg) {
    const int m = w.rows;
    inv_sqrt_deg.resize(m);
    for (int i = 0; i < m; ++i) {
        double d = 0.0;
        const double* row = w.row(i);
        for (int j = 0; j < m; ++j) d += row[j];
        VORVQ_CHECK(d > 0.0, "spectral: isolated vertex in affinity graph");
        inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
    }
    Mat n(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) n(i, j) = w(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
    return n;
}

// second eigenvector of N by power iteration on N + I with the analytic
// top eigenvector D^{1/2} 1 deflated out
std::vector<double> second_eigenvector(const Mat& n_mat, const std::vector<double>& inv_sqrt_deg) {
    const int m = n_mat.rows;
    std::vector<double> v1(m);
    double norm1 = 0.0;
    for (int i = 0; i < m; ++i) {
        v1[i] = 1.0 / inv_sqrt_deg[i];  // sqrt of the degree
        norm1 += v1[i] * v1[i];
    }
    norm1 = std::sqrt(norm1);
    for (double& x : v1) x /= norm1;

    Rng rng(0x5eedULL);  // fixed stream: the embedding depends on points only
    std::vector<double> x(m);
    for (double& e : x) e = rng.normal();

    auto orthonormalize = [&](std::vector<double>& vec) {
        double dot = 0.0;
        for (int i = 0; i < m; ++i) dot += vec[i] * v1[i];
        for (int i = 0; i < m; ++i) vec[i] -= dot * v1[i];
        double norm = 0.0;
        for (int i = 0; i < m; ++i) norm += vec[i] * vec[i];
        norm = std::sqrt(norm);
        VORVQ_CHECK(norm > 1e-300, "spectral: eigensolver collapsed");
        for (int i = 0; i < m; ++i) vec[i] /= norm;
    };
    orthonormalize(x);

    std::vector<double> y(m);
    double lambda_prev = 0.0;
    int stable = 0;
    // near-degenerate spectra (no cluster structure) would need far more
    // iterations than separable ones; the cap keeps ambiguous evaluations
    // cheap without affecting converged cases
    for (int iter = 0; iter < 800; ++iter) {
        kernels::symv(n_mat, x, y);
        for (int i = 0; i < m; ++i) y[i] += x[i];  // N + I keeps the spectrum positive
        double lambda = 0.0;
        for (int i = 0; i < m; ++i) lambda += x[i] * y[i];
        orthonormalize(y);
        x.swap(y);
        if (std::fabs(lambda - lambda_prev) < 1e-12 * std::max(1.0, std::fabs(lambda))) {
            if (++stable >= 3) break;
        } else {
            stable = 0;
        }
        lambda_prev = lambda;
    }
    fix_sign(x.data(), m);
    return x;
}

}  // namespace

Mat spectral_embedding(const Mat& affinity, int n_clusters) {
    const int m = affinity.rows;
    VORVQ_CHECK(m >= n_clusters, "spectral: fewer points than clusters");
    VORVQ_CHECK(n_clusters >= 2, "spectral: need at least two clusters");

    std::vector<double> inv_sqrt_deg;
    const Mat n_mat = normalized_affinity(affinity, inv_sqrt_deg);

    Mat embedding(m, n_clusters);
    const int kJacobiLimit = 400;
    if (m <= kJacobiLimit) {
        std::vector<double> eigenvalues;
        Mat vecs;
        jacobi_eigh(n_mat, eigenvalues, vecs);
        // largest eigenvalues of N = smallest of the normalized Laplacian
        for (int c = 0; c < n_clusters; ++c)
            for (int i = 0; i < m; ++i) embedding(i, c) = vecs(i, m - 1 - c);
    } else {
        VORVQ_CHECK(n_clusters == 2, "spectral: large instances support two clusters only");
        std::vector<double> v1(m);
        double norm1 = 0.0;
        for (int i = 0; i < m; ++i) {
            v1[i] = 1.0 / inv_sqrt_deg[i];
            norm1 += v1[i] * v1[i];
        }
        norm1 = std::sqrt(norm1);
        std::vector<double> v2 = second_eigenvector(n_mat, inv_sqrt_deg);
        for (int i = 0; i < m; ++i) {
            embedding(i, 0) = v1[i] / norm1;
            embedding(i, 1) = v2[i];
        }
    }

    for (int i = 0; i < m; ++i) {
        double norm2 = 0.0;
        double* row = embedding.row(i);
        for (int c = 0; c < n_clusters; ++c) norm2 += row[c] * row[c];
        VORVQ_CHECK(norm2 > 0.0, "spectral: degenerate embedding row");
        const double inv = 1.0 / std::sqrt(norm2);
        for (int c = 0; c < n_clusters; ++c) row[c] *= inv;
    }
    return embedding;
}

std::vector<int> kmeans(const Mat& points, int k, uint64_t seed, int restarts,
                        double* inertia_out) {
    VORVQ_CHECK(points.rows >= k, "kmeans: fewer points than clusters");
    VORVQ_CHECK(restarts >= 1, "kmeans: need at least one restart");

    std::vector<int> best_assign;
    double best_inertia = 0.0;
    std::vector<int> assign(points.rows);
    std::vector<double> dist(points.rows);

    for (int r = 0; r < restarts; ++r) {
        Mat centers = kmeans_pp_init(points, k, subseed(seed, static_cast<uint64_t>(r)));
        for (int iter = 0; iter < 100; ++iter) {
            kernels::nearest_rows(points, centers, assign.data(), dist.data());
            Mat sums(k, points.cols);
            std::vector<int> counts(k, 0);
            for (int i = 0; i < points.rows; ++i) {
                double* srow = sums.row(assign[i]);
                const double* prow = points.row(i);
                for (int c = 0; c < points.cols; ++c) srow[c] += prow[c];
                ++counts[assign[i]];
            }
            bool moved = false;
            for (int j = 0; j < k; ++j) {
                if (counts[j] == 0) continue;  // empty cluster keeps its center
                for (int c = 0; c < points.cols; ++c) {
                    const double next = sums(j, c) / counts[j];
                    if (next != centers(j, c)) moved = true;
                    centers(j, c) = next;
                }
            }
            if (!moved) break;
        }
        kernels::nearest_rows(points, centers, assign.data(), dist.data());
        double inertia = 0.0;
        for (int i = 0; i < points.rows; ++i) inertia += dist[i];
        if (r == 0 || inertia < best_inertia) {
            best_inertia = inertia;
            best_assign = assign;
        }
    }
    if (inertia_out) *inertia_out = best_inertia;
    return best_assign;
}

std::vector<int> spectral_clustering(const Mat& points, int n_clusters, uint64_t seed) {
    const Mat affinity = build_affinity(points);
    const Mat embedding = spectral_embedding(affinity, n_clusters);
    return kmeans(embedding, n_clusters, seed, /*restarts=*/50);
}

double normalized_cut(const Mat& affinity, const std::vector<int>& labels) {
    const int m = affinity.rows;
    VORVQ_CHECK(static_cast<int>(labels.size()) == m, "ncut: label count mismatch");
    double cut = 0.0, vol0 = 0.0, vol1 = 0.0;
    for (int i = 0; i < m; ++i) {
        const double* row = affinity.row(i);
        double degree = 0.0;
        for (int j = 0; j < m; ++j) {
            degree += row[j];
            if (labels[i] != labels[j]) cut += row[j];
        }
        (labels[i] == labels[0] ? vol0 : vol1) += degree;
    }
    cut *= 0.5;  // each cross edge visited twice
    VORVQ_CHECK(vol0 > 0.0 && vol1 > 0.0, "ncut: one side of the partition is empty");
    return cut / vol0 + cut / vol1;
}

ClusteringMetrics clustering_metrics(const std::vector<int>& pred, const std::vector<int>& truth) {
    VORVQ_CHECK(pred.size() == truth.size(), "metrics: length mismatch");
    VORVQ_CHECK(!pred.empty(), "metrics: empty inputs");
    int truth_count[2] = {0, 0};
    for (size_t i = 0; i < truth.size(); ++i) {
        VORVQ_CHECK(truth[i] == 0 || truth[i] == 1, "metrics: truth labels must be 0/1");
        VORVQ_CHECK(pred[i] == 0 || pred[i] == 1, "metrics: predicted labels must be 0/1");
        ++truth_count[truth[i]];
    }
    VORVQ_CHECK(truth_count[0] > 0 && truth_count[1] > 0, "metrics: single-class ground truth");

    ClusteringMetrics best;
    bool first = true;
    for (int swap = 0; swap < 2; ++swap) {
        // confusion[t][p]
        int64_t confusion[2][2] = {{0, 0}, {0, 0}};
        for (size_t i = 0; i < truth.size(); ++i) {
            const int p = swap ? 1 - pred[i] : pred[i];
            ++confusion[truth[i]][p];
        }
        const double total = static_cast<double>(truth.size());
        ClusteringMetrics m;
        m.accuracy = (confusion[0][0] + confusion[1][1]) / total;
        double recall_sum = 0.0, f1_sum = 0.0;
        for (int c = 0; c < 2; ++c) {
            const double tp = static_cast<double>(confusion[c][c]);
            const double fn = static_cast<double>(confusion[c][1 - c]);
            const double fp = static_cast<double>(confusion[1 - c][c]);
            const double recall = tp / (tp + fn);
            const double precision = (tp + fp > 0.0) ? tp / (tp + fp) : 0.0;
            recall_sum += recall;
            f1_sum += (precision + recall > 0.0) ? 2.0 * precision * recall / (precision + recall)
                                                 : 0.0;
        }
        m.macro_recall = recall_sum / 2.0;
        m.macro_f1 = f1_sum / 2.0;
        if (first || m.accuracy > best.accuracy) {
            best = m;
            first = false;
        }
    }
    return best;
}

}  // namespace vorvq::disentangle
