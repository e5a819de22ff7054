#include "tractorc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "tractorc/parallel.hpp"

namespace tractorc {

namespace {

// mean over streamlines of `a` of the MDF to the nearest streamline of `b`
double mean_min_mdf(const Tractogram& a, const Tractogram& b) {
    std::vector<double> best(a.size());
    detail::parallel_blocks(a.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double m = std::numeric_limits<double>::infinity();
            for (const auto& s : b.streamlines) m = std::min(m, mdf_distance(a.streamlines[i], s));
            best[i] = m;
        }
    });
    double total = 0.0;
    for (double v : best) total += v;
    return total / static_cast<double>(a.size());
}

double comb2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

double abd(const Tractogram& a, const Tractogram& b) {
    if (a.empty() || b.empty()) throw MetricError("abd of an empty tractogram");
    return 0.5 * (mean_min_mdf(a, b) + mean_min_mdf(b, a));
}

double VoxelGrid::total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

VoxelGrid voxelize(const Tractogram& t, double spacing) {
    if (t.empty()) return voxelize(t, spacing, BoundingBox{Point3::Zero(), Point3::Zero()});
    return voxelize(t, spacing, bounding_box(t));
}

VoxelGrid voxelize(const Tractogram& t, double spacing, const BoundingBox& bounds) {
    if (!(spacing > 0.0)) throw MetricError("voxel spacing must be positive");
    VoxelGrid g;
    g.origin = bounds.min;
    g.spacing = spacing;
    for (int a = 0; a < 3; ++a) {
        const double extent = std::max(0.0, bounds.max[a] - bounds.min[a]);
        g.dims[static_cast<std::size_t>(a)] = static_cast<std::size_t>(std::floor(extent / spacing)) + 1;
    }
    g.counts.assign(g.size(), 0.0);

    auto index_of = [&g](const Point3& p, std::size_t* out) {
        std::size_t idx[3];
        for (int a = 0; a < 3; ++a) {
            const double c = std::floor((p[a] - g.origin[a]) / g.spacing);
            if (c < 0.0 || c >= static_cast<double>(g.dims[static_cast<std::size_t>(a)])) return false;
            idx[a] = static_cast<std::size_t>(c);
        }
        *out = idx[0] + g.dims[0] * (idx[1] + g.dims[1] * idx[2]);
        return true;
    };

    std::vector<std::size_t> visited;
    for (const auto& s : t.streamlines) {
        visited.clear();
        std::size_t v = 0;
        if (!s.points.empty() && index_of(s.points.front(), &v)) visited.push_back(v);
        for (std::size_t i = 1; i < s.points.size(); ++i) {
            const Point3 a = s.points[i - 1], b = s.points[i];
            const auto steps = static_cast<std::size_t>(std::ceil((b - a).norm() / (0.25 * spacing)));
            for (std::size_t k = 1; k <= std::max<std::size_t>(steps, 1); ++k) {
                const double u = static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(steps, 1));
                if (index_of(a + u * (b - a), &v)) visited.push_back(v);
            }
        }
        std::sort(visited.begin(), visited.end());
        visited.erase(std::unique(visited.begin(), visited.end()), visited.end());
        for (std::size_t idx : visited) g.counts[idx] += 1.0;
    }
    return g;
}

double wdice(const VoxelGrid& a, const VoxelGrid& b) {
    if (a.dims != b.dims || a.spacing != b.spacing || a.origin != b.origin) {
        throw MetricError("wdice: visitation maps are on different grids");
    }
    const double ta = a.total(), tb = b.total();
    if (ta == 0.0 && tb == 0.0) throw MetricError("wdice of two empty tractograms");
    double overlap = 0.0, all = 0.0;
    for (std::size_t v = 0; v < a.counts.size(); ++v) {
        const double wa = ta > 0.0 ? a.counts[v] / ta : 0.0;
        const double wb = tb > 0.0 ? b.counts[v] / tb : 0.0;
        if (wa > 0.0 && wb > 0.0) overlap += wa + wb;
        all += wa + wb;
    }
    return overlap / all;
}

double wdice(const Tractogram& a, const Tractogram& b, double spacing) {
    if (a.empty() && b.empty()) throw MetricError("wdice of two empty tractograms");
    BoundingBox box;
    if (a.empty()) box = bounding_box(b);
    else if (b.empty()) box = bounding_box(a);
    else {
        const BoundingBox ba = bounding_box(a), bb = bounding_box(b);
        box = {ba.min.cwiseMin(bb.min), ba.max.cwiseMax(bb.max)};
    }
    return wdice(voxelize(a, spacing, box), voxelize(b, spacing, box));
}

double alpha_compactness(const Tractogram& t, std::span<const int> labels) {
    if (labels.size() != t.size()) throw MetricError("alpha: label count does not match streamline count");
    std::map<int, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= 0) clusters[labels[i]].push_back(i);
    }
    if (clusters.empty()) throw MetricError("alpha: every streamline is rejected");
    double total = 0.0;
    for (const auto& [label, members] : clusters) {
        const std::size_t m = members.size();
        std::vector<double> d(m * m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = i + 1; j < m; ++j) {
                d[i * m + j] = d[j * m + i] = mdf_distance(t.streamlines[members[i]], t.streamlines[members[j]]);
            }
        }
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < m; ++j) row += d[i * m + j];
            best = std::min(best, row);  // first minimizer wins ties
        }
        total += best / static_cast<double>(m);
    }
    return total / static_cast<double>(clusters.size());
}

double wmpg(std::span<const std::vector<int>> per_subject_labels, std::size_t clusters, std::size_t min_count) {
    if (clusters == 0) throw MetricError("wmpg needs at least one cluster");
    if (min_count == 0) throw MetricError("wmpg min_count must be at least 1");
    if (per_subject_labels.empty()) throw MetricError("wmpg needs at least one subject");
    double total = 0.0;
    for (const auto& labels : per_subject_labels) {
        std::vector<std::size_t> counts(clusters, 0);
        for (int l : labels) {
            if (l >= 0 && static_cast<std::size_t>(l) < clusters) ++counts[static_cast<std::size_t>(l)];
        }
        const auto populated = std::count_if(counts.begin(), counts.end(), [min_count](std::size_t c) { return c >= min_count; });
        total += static_cast<double>(populated) / static_cast<double>(clusters);
    }
    return total / static_cast<double>(per_subject_labels.size());
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw MetricError("ari: labelings have different lengths");
    std::map<std::pair<int, int>, double> table;
    std::map<int, double> rows, cols;
    double n = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < 0 || b[i] < 0) continue;
        table[{a[i], b[i]}] += 1.0;
        rows[a[i]] += 1.0;
        cols[b[i]] += 1.0;
        n += 1.0;
    }
    if (n < 2.0) throw MetricError("ari needs at least two streamlines labelled in both inputs");
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (const auto& [key, c] : table) index += comb2(c);
    for (const auto& [key, c] : rows) sa += comb2(c);
    for (const auto& [key, c] : cols) sb += comb2(c);
    const double expected = sa * sb / comb2(n);
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

double rejection_rate(std::span<const int> labels) {
    if (labels.empty()) return 0.0;
    const auto rejected = std::count_if(labels.begin(), labels.end(), [](int l) { return l < 0; });
    return static_cast<double>(rejected) / static_cast<double>(labels.size());
}

}  // namespace tractorc
