#include "tractorc/optim.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "tractorc/io.hpp"

namespace tractorc::ad {

NamedArray& ParameterSet::add(std::string name, Shape shape, std::vector<double> value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
    if (numel(shape) != value.size()) throw ShapeError("parameter " + name + " value does not fit " + shape_string(shape));
    items_.push_back({std::move(name), std::move(shape), std::move(value)});
    return items_.back();
}

NamedArray& ParameterSet::at(std::string_view name) {
    for (auto& p : items_) {
        if (p.name == name) return p;
    }
    throw std::out_of_range("no parameter named " + std::string(name));
}

const NamedArray& ParameterSet::at(std::string_view name) const { return const_cast<ParameterSet*>(this)->at(name); }

bool ParameterSet::contains(std::string_view name) const {
    for (const auto& p : items_) {
        if (p.name == name) return true;
    }
    return false;
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.value.size();
    return n;
}

AdamWState AdamWState::zeros_like(const ParameterSet& params) {
    AdamWState s;
    for (const auto& p : params.items()) {
        s.m.emplace_back(p.value.size(), 0.0);
        s.v.emplace_back(p.value.size(), 0.0);
    }
    return s;
}

void adamw_step(ParameterSet& params, std::span<const std::vector<double>> grads, AdamWState& state, double lr,
                const AdamWConfig& cfg) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw std::invalid_argument("adamw_step: parameter, gradient and state counts differ");
    }
    for (std::size_t k = 0; k < grads.size(); ++k) {
        for (double g : grads[k]) {
            if (!std::isfinite(g)) throw DivergenceError("non-finite gradient for " + params.items()[k].name);
        }
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t k = 0; k < grads.size(); ++k) {
        auto& w = params.items()[k].value;
        auto& m = state.m[k];
        auto& v = state.v[k];
        const auto& g = grads[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] *= 1.0 - lr * cfg.weight_decay;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

double lr_schedule(std::size_t epoch, double base_lr, double decay, std::size_t every) {
    if (every == 0) return base_lr;
    return base_lr * std::pow(decay, static_cast<double>(epoch / every));
}

// ---- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'T', 'R', 'A', 'C', 'T', 'O', 'R', 'C'};

template <typename T>
void put(std::vector<char>& out, T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
public:
    explicit Reader(std::span<const char> bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string string(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }
    std::span<const char> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_checkpoint(std::span<const NamedArray> records) {
    std::vector<char> out(std::begin(kMagic), std::end(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        if (numel(r.shape) != r.value.size()) throw CheckpointError("record " + r.name + " value does not fit its shape");
        put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
        out.insert(out.end(), r.name.begin(), r.name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
        for (auto d : r.shape) put<std::uint64_t>(out, d);
        for (double v : r.value) put<double>(out, v);
    }
    return out;
}

std::vector<NamedArray> decode_checkpoint(std::span<const char> bytes) {
    Reader in(bytes);
    if (in.string(8) != std::string(kMagic, 8)) throw CheckpointError("not a checkpoint file (bad magic)");
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto count = in.get<std::uint32_t>();
    std::vector<NamedArray> out;
    out.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
        NamedArray r;
        r.name = in.string(in.get<std::uint32_t>());
        const auto ndim = in.get<std::uint32_t>();
        for (std::uint32_t d = 0; d < ndim; ++d) r.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
        std::size_t count = 1;
        for (std::size_t d : r.shape) {
            if (d != 0 && count > in.remaining() / 8 / d) count = SIZE_MAX;
            else count *= d;
        }
        if (count > in.remaining() / 8) {
            throw CheckpointError("record '" + r.name + "' is larger than the rest of the file (byte " +
                                  std::to_string(in.offset()) + ")");
        }
        r.value.resize(count);
        for (double& v : r.value) v = in.get<double>();
        out.push_back(std::move(r));
    }
    if (!in.done()) throw CheckpointError("trailing bytes after checkpoint at byte " + std::to_string(in.offset()));
    return out;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> records) {
    const auto bytes = encode_checkpoint(records);
    io::write_file_atomic(path, std::string_view(bytes.data(), bytes.size()));
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = io::read_file(path);
    return decode_checkpoint(std::span<const char>(bytes.data(), bytes.size()));
}

}  // namespace tractorc::ad
