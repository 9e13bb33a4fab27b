#include <doctest.h>

#include <cmath>

#include "vorvq/disentangle.hpp"
#include "vorvq/rng.hpp"

using namespace vorvq;

namespace {

// independent normalized-cut evaluation for the enumeration oracle
double ncut_oracle(const Mat& w, const std::vector<int>& labels) {
    double cut = 0.0, vol[2] = {0.0, 0.0};
    for (int i = 0; i < w.rows; ++i)
        for (int j = 0; j < w.cols; ++j) {
            vol[labels[i]] += w(i, j);
            if (labels[i] != labels[j] && i < j) cut += w(i, j);
        }
    if (vol[0] == 0.0 || vol[1] == 0.0) return 1e300;
    return cut / vol[0] + cut / vol[1];
}

double min_ncut_bruteforce(const Mat& w) {
    const int m = w.rows;
    double best = 1e300;
    for (unsigned mask = 1; mask + 1 < (1u << m); ++mask) {
        if (mask & 1u) continue;  // fix point 0 on side 0, halves the search
        std::vector<int> labels(m);
        for (int i = 0; i < m; ++i) labels[i] = (mask >> i) & 1u;
        best = std::min(best, ncut_oracle(w, labels));
    }
    return best;
}

Mat two_blobs(Rng& rng, int per_blob, int dim, double separation, double spread) {
    Mat pts(2 * per_blob, dim);
    for (int i = 0; i < 2 * per_blob; ++i) {
        const double center = (i < per_blob) ? 0.0 : separation;
        for (int c = 0; c < dim; ++c)
            pts(i, c) = (c == 0 ? center : 0.0) + rng.normal() * spread;
    }
    return pts;
}

}  // namespace

TEST_CASE("affinity matrix is a symmetric gaussian kernel with zero diagonal") {
    Rng rng(12);
    Mat pts = randn(rng, 10, 3);
    // plant an exact duplicate pair
    for (int c = 0; c < 3; ++c) pts(7, c) = pts(2, c);

    const Mat w = disentangle::build_affinity(pts);
    CHECK(w(2, 7) == 1.0);
    for (int i = 0; i < w.rows; ++i) {
        CHECK(w(i, i) == 0.0);
        for (int j = 0; j < w.cols; ++j) {
            CHECK(w(i, j) == w(j, i));
            if (i != j) {
                CHECK(w(i, j) > 0.0);
                CHECK(w(i, j) <= 1.0);
            }
        }
    }

    // monotone decreasing in distance
    Mat line(3, 1);
    line(0, 0) = 0.0;
    line(1, 0) = 1.0;
    line(2, 0) = 5.0;
    const Mat wl = disentangle::build_affinity(line);
    CHECK(wl(0, 1) > wl(0, 2));

    Mat identical(4, 2, 3.25);
    CHECK_THROWS(disentangle::build_affinity(identical));
    Mat single(1, 2);
    CHECK_THROWS(disentangle::build_affinity(single));
}

TEST_CASE("jacobi eigendecomposition reconstructs symmetric matrices") {
    Rng rng(9);
    const Mat g = randn(rng, 6, 6);
    Mat sym(6, 6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) sym(i, j) = 0.5 * (g(i, j) + g(j, i));

    std::vector<double> eigenvalues;
    Mat vectors;
    disentangle::jacobi_eigh(sym, eigenvalues, vectors);

    for (int j = 0; j < 6; ++j) {
        if (j > 0) CHECK(eigenvalues[j] >= eigenvalues[j - 1]);
        // residual || A v - lambda v ||
        for (int i = 0; i < 6; ++i) {
            double av = 0.0;
            for (int k = 0; k < 6; ++k) av += sym(i, k) * vectors(k, j);
            CHECK(av == doctest::Approx(eigenvalues[j] * vectors(i, j)).epsilon(1e-9));
        }
        // orthonormal columns
        for (int j2 = 0; j2 <= j; ++j2) {
            double dot = 0.0;
            for (int k = 0; k < 6; ++k) dot += vectors(k, j) * vectors(k, j2);
            CHECK(dot == doctest::Approx(j == j2 ? 1.0 : 0.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("spectral clustering separates far blobs perfectly") {
    Rng rng(41);
    const Mat pts = two_blobs(rng, 30, 3, 10.0, 0.2);
    const std::vector<int> labels = disentangle::spectral_clustering(pts, 2, 5);
    std::vector<int> truth(60, 0);
    for (int i = 30; i < 60; ++i) truth[i] = 1;
    const auto m = disentangle::clustering_metrics(labels, truth);
    CHECK(m.accuracy == 1.0);
}

TEST_CASE("large instances use the iterative path and still separate blobs") {
    Rng rng(43);
    const Mat pts = two_blobs(rng, 300, 3, 12.0, 0.3);  // above the dense-solver limit
    const std::vector<int> labels = disentangle::spectral_clustering(pts, 2, 5);
    std::vector<int> truth(600, 0);
    for (int i = 300; i < 600; ++i) truth[i] = 1;
    const auto m = disentangle::clustering_metrics(labels, truth);
    CHECK(m.accuracy == 1.0);
}

TEST_CASE("two tight pairs match the brute-force minimum normalized cut") {
    Mat pts(4, 2);
    pts(0, 0) = 0.0;
    pts(1, 0) = 0.1;
    pts(2, 0) = 4.0;
    pts(3, 0) = 4.1;
    const std::vector<int> labels = disentangle::spectral_clustering(pts, 2, 3);
    CHECK(labels[0] == labels[1]);
    CHECK(labels[2] == labels[3]);
    CHECK(labels[0] != labels[2]);

    const Mat w = disentangle::build_affinity(pts);
    const double chosen = disentangle::normalized_cut(w, labels);
    CHECK(std::fabs(chosen - min_ncut_bruteforce(w)) < 1e-9);
}

TEST_CASE("random small instances achieve the optimal cut on separable data") {
    Rng rng(77);
    for (int trial = 0; trial < 25; ++trial) {
        const int per_group = 2 + static_cast<int>(rng.below(3));  // M in [4, 8]
        const int m = 2 * per_group;
        Mat pts(m, 2);
        for (int i = 0; i < m; ++i) {
            const double cx = (i < per_group) ? 0.0 : 6.0;
            pts(i, 0) = cx + rng.normal() * 0.5;
            pts(i, 1) = rng.normal() * 0.5;
        }
        const std::vector<int> labels = disentangle::spectral_clustering(pts, 2, trial);
        const Mat w = disentangle::build_affinity(pts);
        CHECK(std::fabs(disentangle::normalized_cut(w, labels) - min_ncut_bruteforce(w)) < 1e-9);
    }
}

TEST_CASE("duplicated points land in the same cluster") {
    Rng rng(7);
    const Mat base = two_blobs(rng, 6, 2, 8.0, 0.3);
    Mat doubled(2 * base.rows, base.cols);
    for (int i = 0; i < base.rows; ++i)
        for (int c = 0; c < base.cols; ++c) {
            doubled(2 * i, c) = base(i, c);
            doubled(2 * i + 1, c) = base(i, c);
        }
    const std::vector<int> labels = disentangle::spectral_clustering(doubled, 2, 1);
    for (int i = 0; i < base.rows; ++i) CHECK(labels[2 * i] == labels[2 * i + 1]);
}

TEST_CASE("spectral clustering is deterministic given the seed") {
    Rng rng(15);
    const Mat pts = randn(rng, 40, 4);
    const std::vector<int> a = disentangle::spectral_clustering(pts, 2, 9);
    const std::vector<int> b = disentangle::spectral_clustering(pts, 2, 9);
    CHECK(a == b);
}

TEST_CASE("clustering metrics evaluate both label mappings") {
    const std::vector<int> truth = {0, 0, 1, 1};
    auto m = disentangle::clustering_metrics(truth, truth);
    CHECK(m.accuracy == 1.0);
    CHECK(m.macro_recall == 1.0);
    CHECK(m.macro_f1 == 1.0);

    const std::vector<int> complement = {1, 1, 0, 0};
    m = disentangle::clustering_metrics(complement, truth);
    CHECK(m.accuracy == 1.0);
    CHECK(m.macro_f1 == 1.0);

    const std::vector<int> pred = {0, 1, 1, 1};
    m = disentangle::clustering_metrics(pred, truth);
    CHECK(m.accuracy == doctest::Approx(0.75));
    CHECK(m.macro_recall == doctest::Approx(0.75));
    CHECK(m.macro_f1 == doctest::Approx(11.0 / 15.0));  // (2/3 + 4/5) / 2

    CHECK_THROWS(disentangle::clustering_metrics({0, 1}, {0, 0}));  // single-class truth
    CHECK_THROWS(disentangle::clustering_metrics({0, 2}, {0, 1}));  // bad label value
}

TEST_CASE("metrics are invariant under global permutation of predicted ids") {
    Rng rng(3);
    std::vector<int> truth(20), pred(20);
    for (int i = 0; i < 20; ++i) {
        truth[i] = i % 2;
        pred[i] = static_cast<int>(rng.below(2));
    }
    std::vector<int> flipped(20);
    for (int i = 0; i < 20; ++i) flipped[i] = 1 - pred[i];
    const auto a = disentangle::clustering_metrics(pred, truth);
    const auto b = disentangle::clustering_metrics(flipped, truth);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.macro_recall == b.macro_recall);
    CHECK(a.macro_f1 == b.macro_f1);
}

TEST_CASE("kmeans clusters separated data and respects its seed") {
    Rng rng(25);
    const Mat pts = two_blobs(rng, 20, 2, 9.0, 0.4);
    double inertia = 0.0;
    const std::vector<int> a = disentangle::kmeans(pts, 2, 4, 10, &inertia);
    CHECK(inertia > 0.0);
    for (int i = 1; i < 20; ++i) CHECK(a[i] == a[0]);
    for (int i = 21; i < 40; ++i) CHECK(a[i] == a[20]);
    CHECK(a[0] != a[20]);
    const std::vector<int> b = disentangle::kmeans(pts, 2, 4, 10, nullptr);
    CHECK(a == b);
}
