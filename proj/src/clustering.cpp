#include "tractorc/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "tractorc/synthetic.hpp"

namespace tractorc {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
        const double d = a[c] - b[c];
        acc += d * d;
    }
    return acc;
}

void require_rows_normalized(const DenseMatrix& m, const char* what) {
    for (double v : m.values) {
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + " has non-finite entries");
    }
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) throw ad::ShapeError("DenseMatrix: value count does not match shape");
}

KMeansResult kmeans(const DenseMatrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations) {
    const std::size_t n = points.rows, d = points.cols;
    if (k == 0) throw std::invalid_argument("k-means needs k >= 1");
    if (n < k) throw std::invalid_argument("k-means needs at least k = " + std::to_string(k) + " points, got " + std::to_string(n));
    std::mt19937_64 rng(derive_seed(seed, 0x6b6d6561));

    // k-means++ seeding
    std::vector<std::size_t> chosen;
    chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (chosen.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], sq_dist(points.row(i), points.row(chosen.back())));
            total += nearest[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                r -= nearest[i];
                if (r < 0.0 && nearest[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            while (nearest[pick] == 0.0 && pick > 0) --pick;  // never re-pick a chosen point
        } else {
            // every point coincides with a centre; take the first unused index
            for (std::size_t i = 0; i < n; ++i) {
                if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) {
                    pick = i;
                    break;
                }
            }
        }
        chosen.push_back(pick);
    }

    KMeansResult res;
    res.centroids = DenseMatrix(k, d, std::vector<double>(k * d));
    for (std::size_t j = 0; j < k; ++j) {
        std::copy_n(points.row(chosen[j]).begin(), d, res.centroids.values.begin() + static_cast<std::ptrdiff_t>(j * d));
    }
    res.assignment.assign(n, -1);

    for (res.iterations = 0; res.iterations < max_iterations; ++res.iterations) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < k; ++j) {
                const double dist = sq_dist(points.row(i), res.centroids.row(j));
                if (dist < best_d) {
                    best_d = dist;
                    best = static_cast<int>(j);
                }
            }
            if (res.assignment[i] != best) {
                res.assignment[i] = best;
                changed = true;
            }
        }
        if (!changed) break;
        std::vector<double> sums(k * d, 0.0);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto j = static_cast<std::size_t>(res.assignment[i]);
            ++counts[j];
            for (std::size_t c = 0; c < d; ++c) sums[j * d + c] += points(i, c);
        }
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) continue;  // empty cluster keeps its previous centre
            for (std::size_t c = 0; c < d; ++c) res.centroids(j, c) = sums[j * d + c] / static_cast<double>(counts[j]);
        }
    }
    res.cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        res.cost += sq_dist(points.row(i), res.centroids.row(static_cast<std::size_t>(res.assignment[i])));
    }
    return res;
}

DenseMatrix kmeans_init(const DenseMatrix& z, std::size_t k, std::uint64_t seed) { return kmeans(z, k, seed).centroids; }

DenseMatrix soft_assign(const DenseMatrix& z, const DenseMatrix& mu) {
    if (z.cols != mu.cols) throw ad::ShapeError("soft_assign: embedding width " + std::to_string(z.cols) + " != centroid width " + std::to_string(mu.cols));
    DenseMatrix q(z.rows, mu.rows, std::vector<double>(z.rows * mu.rows));
    for (std::size_t i = 0; i < z.rows; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < mu.rows; ++j) {
            q(i, j) = 1.0 / (1.0 + sq_dist(z.row(i), mu.row(j)));
            total += q(i, j);
        }
        for (std::size_t j = 0; j < mu.rows; ++j) q(i, j) /= total;
    }
    return q;
}

ad::Tensor soft_assign(const ad::Tensor& z, const ad::Tensor& mu) {
    return ad::softmax(ad::mul_scalar(ad::log1p(ad::pairwise_sq_distance(z, mu)), -1.0), 1);
}

TargetDistribution target_distribution(const DenseMatrix& q) {
    require_rows_normalized(q, "soft assignments");
    TargetDistribution out;
    std::vector<double> mass(q.cols, 0.0);
    for (std::size_t i = 0; i < q.rows; ++i)
        for (std::size_t j = 0; j < q.cols; ++j) mass[j] += q(i, j);
    for (double& f : mass) {
        if (f < kClusterMassFloor) {
            f = kClusterMassFloor;
            ++out.dead_clusters;
        }
    }
    out.p = DenseMatrix(q.rows, q.cols, std::vector<double>(q.values.size()));
    for (std::size_t i = 0; i < q.rows; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < q.cols; ++j) {
            out.p(i, j) = q(i, j) * q(i, j) / mass[j];
            total += out.p(i, j);
        }
        for (std::size_t j = 0; j < q.cols; ++j) out.p(i, j) /= total;
    }
    return out;
}

double kl_loss(const DenseMatrix& p, const DenseMatrix& q) {
    if (p.rows != q.rows || p.cols != q.cols) throw ad::ShapeError("kl_loss: p and q shapes differ");
    double total = 0.0;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        if (!(q.values[i] > 0.0)) throw std::domain_error("kl_loss: q entry " + std::to_string(i) + " is not positive");
        if (p.values[i] > 0.0) total += p.values[i] * std::log(p.values[i] / q.values[i]);
    }
    return total;
}

ad::Tensor kl_loss(const DenseMatrix& p, const ad::Tensor& q) {
    if (q.shape() != ad::Shape{p.rows, p.cols}) throw ad::ShapeError("kl_loss: p and q shapes differ");
    for (double v : q.value()) {
        if (!(v > 0.0)) throw std::domain_error("kl_loss: q has a non-positive entry");
    }
    double entropy_term = 0.0;
    for (double v : p.values) {
        if (v > 0.0) entropy_term += v * std::log(v);
    }
    ad::Tape& tape = q.tape();
    const ad::Tensor pt = tape.constant({p.rows, p.cols}, p.values);
    return ad::add_scalar(ad::mul_scalar(ad::sum(ad::mul(pt, ad::log(q))), -1.0), entropy_term);
}

std::vector<int> hard_assign(const DenseMatrix& q, double thr) {
    std::vector<int> labels(q.rows, -1);
    for (std::size_t i = 0; i < q.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < q.cols; ++j) {
            if (q(i, j) > q(i, best)) best = j;
        }
        if (q.cols > 0 && q(i, best) >= thr) labels[i] = static_cast<int>(best);
    }
    return labels;
}

ClusterSummary summarize_labels(std::span<const int> labels, std::size_t clusters) {
    ClusterSummary s;
    s.clusters = clusters;
    s.sizes.assign(clusters, 0);
    for (int l : labels) {
        if (l < 0) ++s.rejected;
        else if (static_cast<std::size_t>(l) < clusters) ++s.sizes[static_cast<std::size_t>(l)];
        else throw std::out_of_range("label " + std::to_string(l) + " exceeds cluster count " + std::to_string(clusters));
    }
    return s;
}

}  // namespace tractorc
