#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tractorc/autodiff.hpp"

namespace tractorc::ad {

/// A named dense array. Used for learnable parameters and checkpoint records.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> value;

    bool operator==(const NamedArray&) const = default;
};

class ParameterSet {
public:
    NamedArray& add(std::string name, Shape shape, std::vector<double> value);
    NamedArray& at(std::string_view name);
    const NamedArray& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::vector<NamedArray>& items() { return items_; }
    const std::vector<NamedArray>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::size_t scalar_count() const;

    bool operator==(const ParameterSet&) const = default;

private:
    std::vector<NamedArray> items_;
};

/// Raised when a gradient or loss goes non-finite.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

struct AdamWState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;

    static AdamWState zeros_like(const ParameterSet& params);
    bool operator==(const AdamWState&) const = default;
};

/// One AdamW update. Weight decay is decoupled: params are shrunk by
/// lr * weight_decay before the bias-corrected moment step.
void adamw_step(ParameterSet& params, std::span<const std::vector<double>> grads, AdamWState& state, double lr,
                const AdamWConfig& cfg = {});

/// base_lr * decay^floor(epoch / every)
double lr_schedule(std::size_t epoch, double base_lr, double decay = 0.1, std::size_t every = 1000);

// Checkpoint container, little-endian:
//   "TRACTORC" | u32 version | u32 record_count
//   per record: u32 name_len | name bytes | u32 ndim | u64 dims[ndim] | f64 data[prod(dims)]
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<char> encode_checkpoint(std::span<const NamedArray> records);
std::vector<NamedArray> decode_checkpoint(std::span<const char> bytes);
void write_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> records);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

}  // namespace tractorc::ad
