#pragma once

// Spectral clustering of pooled enhanced/noisy embeddings and the
// two-class clustering metrics. The clustering follows Ng-Jordan-Weiss:
// Gaussian affinity with the median-distance bandwidth, symmetric
// normalized Laplacian, row-normalized eigenvector embedding, k-means with
// restarts.

#include <cstdint>
#include <vector>

#include "vorvq/mat.hpp"

namespace vorvq::disentangle {

struct LabeledEmbeddings {
    Mat points;               // M x D
    std::vector<int> labels;  // 0 = enhanced, 1 = noisy
};

// W(i,j) = exp(-||xi-xj||^2 / (2 sigma^2)), sigma = median pairwise
// distance, zero diagonal; throws when all points coincide
Mat build_affinity(const Mat& points);

// two smallest eigenvectors of the symmetric normalized Laplacian,
// row-normalized; exposed for the small-instance oracle tests
Mat spectral_embedding(const Mat& affinity, int n_clusters);

std::vector<int> spectral_clustering(const Mat& points, int n_clusters, uint64_t seed);

// normalized cut of a bipartition under affinity W
double normalized_cut(const Mat& affinity, const std::vector<int>& labels);

struct ClusteringMetrics {
    double accuracy = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

// evaluates both label mappings and keeps the accuracy-maximizing one
ClusteringMetrics clustering_metrics(const std::vector<int>& pred, const std::vector<int>& truth);

// k-means with k-means++ seeding; returns assignments, writes inertia if
// requested. Used by the NJW step and available to tests.
std::vector<int> kmeans(const Mat& points, int k, uint64_t seed, int restarts,
                        double* inertia_out = nullptr);

// full eigendecomposition of a symmetric matrix (cyclic Jacobi);
// eigenvalues ascending, eigenvectors in columns
void jacobi_eigh(const Mat& sym, std::vector<double>& eigenvalues, Mat& eigenvectors);

}  // namespace vorvq::disentangle
