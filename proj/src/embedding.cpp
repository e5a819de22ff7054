#include "tractorc/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>

namespace tractorc {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

namespace {

constexpr std::size_t kInferenceChunk = 512;  // streamlines per inference tape

std::string layer_name(std::size_t l, const char* what) { return "embed.layer" + std::to_string(l) + "." + what; }

std::size_t layer_input_width(const EmbeddingConfig& cfg, std::size_t l) {
    if (l == 0) return cfg.absolute_channels ? 6 : 3;
    return 2 * static_cast<std::size_t>(cfg.widths[l - 1]);
}

// Per-streamline graphs over row-major [rows, dim] values, with global indices.
std::vector<std::size_t> streamline_graphs(std::span<const double> values, std::size_t rows, std::size_t dim,
                                           const EmbeddingConfig& cfg) {
    const std::size_t n = cfg.n_points;
    std::vector<std::size_t> out;
    out.reserve(rows * cfg.knn_k);
    for (std::size_t start = 0; start < rows; start += n) {
        const auto local = knn_graph(values.subspan(start * dim, n * dim), n, dim, cfg.knn_k);
        for (auto idx : local) out.push_back(start + idx);
    }
    return out;
}

// out[j, c] = max_m leaky(own[j, c] + other[nb[j, m], c] + bias[c]); the
// gradient goes to the first maximizing edge. Fused so that no per-edge
// tensor is ever stored.
Tensor neighbor_max(const Tensor& own, const Tensor& other, std::span<const std::size_t> neighbors, std::size_t k,
                    const Tensor& bias, double slope) {
    const std::size_t rows = own.dim(0), c = own.dim(1);
    if (other.shape() != own.shape() || bias.size() != c) {
        throw ad::ShapeError("edgeconv: mismatched shapes " + ad::shape_string(own.shape()) + ", " +
                             ad::shape_string(other.shape()) + ", bias " + ad::shape_string(bias.shape()));
    }
    const auto& a = own.value();
    const auto& o = other.value();
    const auto& b = bias.value();
    std::vector<double> out(rows * c);
    std::vector<std::uint32_t> arg(rows * c);
    for (std::size_t j = 0; j < rows; ++j) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double best = 0.0;
            std::uint32_t which = 0;
            for (std::size_t m = 0; m < k; ++m) {
                double v = a[j * c + ch] + o[neighbors[j * k + m] * c + ch] + b[ch];
                v = v > 0.0 ? v : slope * v;
                if (m == 0 || v > best) {
                    best = v;
                    which = static_cast<std::uint32_t>(m);
                }
            }
            out[j * c + ch] = best;
            arg[j * c + ch] = which;
        }
    }
    const std::size_t ia = own.id(), io = other.id(), ib = bias.id();
    const bool ga = own.requires_grad(), go = other.requires_grad(), gb = bias.requires_grad();
    std::vector<std::size_t> nb(neighbors.begin(), neighbors.end());
    return own.tape().record({rows, c}, std::move(out), ga || go || gb,
                             [=, arg = std::move(arg), nb = std::move(nb)](Tape& tape, const ad::Node& self) {
                                 std::vector<double>* gap = ga ? &tape.grad_buffer(ia) : nullptr;
                                 std::vector<double>* gop = go ? &tape.grad_buffer(io) : nullptr;
                                 std::vector<double>* gbp = gb ? &tape.grad_buffer(ib) : nullptr;
                                 const auto& av = tape.node(ia).value;
                                 const auto& ov = tape.node(io).value;
                                 const auto& bv = tape.node(ib).value;
                                 for (std::size_t j = 0; j < rows; ++j) {
                                     for (std::size_t ch = 0; ch < c; ++ch) {
                                         const std::size_t at = j * c + ch;
                                         const std::size_t src = nb[j * k + arg[at]];
                                         const double pre = av[at] + ov[src * c + ch] + bv[ch];
                                         const double g = self.grad[at] * (pre > 0.0 ? 1.0 : slope);
                                         if (gap) (*gap)[at] += g;
                                         if (gop) (*gop)[src * c + ch] += g;
                                         if (gbp) (*gbp)[ch] += g;
                                     }
                                 }
                             });
}

}  // namespace

EmbeddingConfig EmbeddingConfig::from_config(const Config& cfg) {
    EmbeddingConfig e;
    e.widths = cfg.embed_widths;
    e.knn_k = static_cast<std::size_t>(cfg.knn_k);
    e.n_points = static_cast<std::size_t>(cfg.n_points);
    e.leaky_slope = cfg.leaky_slope;
    e.dynamic_graph = cfg.dynamic_graph;
    e.absolute_channels = cfg.absolute_channels;
    e.input_scale = cfg.input_scale;
    return e;
}

std::vector<std::size_t> knn_graph(std::span<const double> points, std::size_t n, std::size_t dim, std::size_t k) {
    if (k >= n) throw std::invalid_argument("knn_graph: k = " + std::to_string(k) + " must be smaller than the point count " + std::to_string(n));
    if (points.size() != n * dim) throw ad::ShapeError("knn_graph: buffer does not hold " + std::to_string(n) + " points");
    std::vector<std::size_t> out(n * k);
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
        cand.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (i == j) continue;
            double d2 = 0.0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double diff = points[i * dim + c] - points[j * dim + c];
                d2 += diff * diff;
            }
            cand.emplace_back(d2, i);
        }
        // pair ordering breaks distance ties by the lower index
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t m = 0; m < k; ++m) out[j * k + m] = cand[m].second;
    }
    return out;
}

void init_embedding_params(ad::ParameterSet& params, const EmbeddingConfig& cfg, std::mt19937_64& rng) {
    for (std::size_t l = 0; l < cfg.widths.size(); ++l) {
        const std::size_t in = layer_input_width(cfg, l);
        const std::size_t out = static_cast<std::size_t>(cfg.widths[l]);
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-bound, bound);
        std::vector<double> w(in * out);
        for (double& v : w) v = u(rng);
        params.add(layer_name(l, "W"), {in, out}, std::move(w));
        params.add(layer_name(l, "b"), {out}, std::vector<double>(out, 0.0));
    }
}

BoundParameters::BoundParameters(Tape& tape, const ad::ParameterSet& params, bool trainable) : params_(&params) {
    tensors_.reserve(params.size());
    for (const auto& p : params.items()) {
        tensors_.push_back(trainable ? tape.variable(p.shape, p.value) : tape.constant(p.shape, p.value));
    }
}

BoundParameters::BoundParameters(const ad::ParameterSet& layout, std::vector<Tensor> tensors)
    : params_(&layout), tensors_(std::move(tensors)) {
    if (tensors_.size() != layout.size()) throw ad::ShapeError("BoundParameters: tensor count does not match the layout");
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].shape() != layout.items()[i].shape) {
            throw ad::ShapeError("BoundParameters: " + layout.items()[i].name + " bound to a " +
                                 ad::shape_string(tensors_[i].shape()) + " tensor");
        }
    }
}

Tensor BoundParameters::operator[](std::string_view name) const {
    const auto& items = params_->items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].name == name) return tensors_[i];
    }
    throw std::out_of_range("no bound parameter named " + std::string(name));
}

std::vector<std::vector<double>> BoundParameters::gradients() const {
    std::vector<std::vector<double>> out;
    out.reserve(tensors_.size());
    for (const auto& t : tensors_) {
        if (t.requires_grad()) out.emplace_back(t.grad().begin(), t.grad().end());
        else out.emplace_back(t.size(), 0.0);
    }
    return out;
}

Tensor edgeconv_layer(const Tensor& features, std::span<const std::size_t> neighbors, std::size_t k, const Tensor& weight,
                      const Tensor& bias, double slope, bool absolute) {
    if (features.shape().size() != 2) throw ad::ShapeError("edgeconv: features must be 2-D, got " + ad::shape_string(features.shape()));
    const std::size_t rows = features.dim(0);
    if (k == 0 || neighbors.size() != rows * k) {
        throw ad::ShapeError("edgeconv: expected " + std::to_string(rows * k) + " neighbor indices, got " + std::to_string(neighbors.size()));
    }
    // concat(x_j, x_m - x_j) W = x_j (W_top - W_bottom) + x_m W_bottom, so the
    // matmuls run per point instead of per edge
    const std::size_t c = features.dim(1);
    if (weight.shape().size() != 2 || weight.dim(0) != (absolute ? 2 * c : c)) {
        throw ad::ShapeError("edgeconv: weight " + ad::shape_string(weight.shape()) + " does not fit " +
                             std::to_string(c) + " input channels");
    }
    Tensor own, other;
    if (absolute) {
        const Tensor top = ad::slice_rows(weight, 0, c);
        const Tensor bottom = ad::slice_rows(weight, c, 2 * c);
        own = ad::matmul(features, ad::sub(top, bottom));
        other = ad::matmul(features, bottom);
    } else {
        other = ad::matmul(features, weight);
        own = ad::mul_scalar(other, -1.0);
    }
    return neighbor_max(own, other, neighbors, k, bias, slope);
}

Tensor embed_points(const Tensor& coords, const BoundParameters& params, const EmbeddingConfig& cfg) {
    if (coords.shape().size() != 2 || coords.dim(1) != 3) throw ad::ShapeError("embed_points: coords must be [M,3]");
    const std::size_t rows = coords.dim(0);
    if (rows == 0 || rows % cfg.n_points != 0) {
        throw ad::ShapeError("embed_points: " + std::to_string(rows) + " rows is not a whole number of " +
                             std::to_string(cfg.n_points) + "-point streamlines");
    }
    const Tensor x = ad::mul_scalar(coords, cfg.input_scale);
    const auto coord_graph = streamline_graphs(x.value(), rows, 3, cfg);
    Tensor f = x;
    for (std::size_t l = 0; l < cfg.widths.size(); ++l) {
        const bool rebuild = l > 0 && cfg.dynamic_graph;
        const auto graph = rebuild ? streamline_graphs(f.value(), rows, f.dim(1), cfg) : coord_graph;
        f = edgeconv_layer(f, graph, cfg.knn_k, params[layer_name(l, "W")], params[layer_name(l, "b")], cfg.leaky_slope,
                           l > 0 || cfg.absolute_channels);
    }
    return f;
}

Tensor pool_streamlines(const Tensor& h, std::size_t n_points) {
    if (h.shape().size() != 2 || h.dim(0) == 0 || n_points == 0 || h.dim(0) % n_points != 0) {
        throw ad::ShapeError("pool_streamlines: cannot split " + ad::shape_string(h.shape()) + " into " +
                             std::to_string(n_points) + "-point streamlines");
    }
    const std::size_t b = h.dim(0) / n_points, d = h.dim(1);
    const Tensor grouped = ad::reshape(h, {b, n_points, d});
    return ad::concat(ad::reduce_max(grouped, 1), ad::reduce_mean(grouped, 1));
}

namespace {

template <typename Fn>
void for_each_chunk(const Tractogram& t, const ad::ParameterSet& params, const EmbeddingConfig& cfg, Fn&& fn) {
    for (const auto& p : params.items()) {
        for (double v : p.value) {
            if (!std::isfinite(v)) throw std::invalid_argument("parameter " + p.name + " has non-finite entries");
        }
    }
    for (const auto& s : t.streamlines) {
        if (s.size() != cfg.n_points) {
            throw GeometryError("streamline has " + std::to_string(s.size()) + " points; resample to " +
                                std::to_string(cfg.n_points) + " first");
        }
    }
    for (std::size_t start = 0; start < t.size(); start += kInferenceChunk) {
        const std::size_t end = std::min(t.size(), start + kInferenceChunk);
        Tractogram chunk;
        chunk.streamlines.assign(t.streamlines.begin() + static_cast<std::ptrdiff_t>(start),
                                 t.streamlines.begin() + static_cast<std::ptrdiff_t>(end));
        fn(chunk);
    }
}

}  // namespace

PointEmbeddings embed_points(const Tractogram& t, const ad::ParameterSet& params, const EmbeddingConfig& cfg) {
    PointEmbeddings out;
    out.dim = cfg.point_dim();
    for_each_chunk(t, params, cfg, [&](const Tractogram& chunk) {
        Tape tape;
        const BoundParameters bound(tape, params, false);
        const Tensor coords = tape.constant({chunk.point_count(), 3}, flatten_points(chunk));
        const Tensor h = embed_points(coords, bound, cfg);
        out.values.insert(out.values.end(), h.value().begin(), h.value().end());
        out.rows += h.dim(0);
    });
    return out;
}

StreamlineEmbeddings embed_streamlines(const Tractogram& t, const ad::ParameterSet& params, const EmbeddingConfig& cfg) {
    StreamlineEmbeddings out;
    out.dim = cfg.streamline_dim();
    for_each_chunk(t, params, cfg, [&](const Tractogram& chunk) {
        Tape tape;
        const BoundParameters bound(tape, params, false);
        const Tensor coords = tape.constant({chunk.point_count(), 3}, flatten_points(chunk));
        const Tensor z = pool_streamlines(embed_points(coords, bound, cfg), cfg.n_points);
        out.values.insert(out.values.end(), z.value().begin(), z.value().end());
        out.rows += z.dim(0);
    });
    return out;
}

}  // namespace tractorc
