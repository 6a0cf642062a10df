#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "actsteer/io.hpp"
#include "actsteer/tensor.hpp"

namespace actsteer {

/// Coordinate-wise affine map z -> omega (.) z + bias. Identity is
/// omega = 1, bias = 0; both vectors always have equal length.
struct AffineMap {
    std::vector<double> omega;
    std::vector<double> bias;

    static AffineMap identity(std::size_t dim);
    std::size_t dim() const { return omega.size(); }
    void validate() const;  // equal lengths, finite entries
};

/// One AffineMap per hook of the model it was trained against.
struct TransportStack {
    std::vector<AffineMap> maps;
    std::vector<std::size_t> hook_dims;

    std::size_t hook_count() const { return maps.size(); }
    void validate() const;
};

TransportStack identity_stack(const std::vector<std::size_t>& hook_dims);

/// A map's parameters as 1 x d tensors so the same forward code serves eager
/// evaluation (detached) and training (tape leaves with gradients).
struct HookParams {
    Tensor omega;
    Tensor bias;
};

HookParams as_params(const AffineMap& map);
HookParams as_tracked_params(const AffineMap& map, Tape& tape);
AffineMap to_map(const HookParams& p);

/// Rowwise omega (.) z + bias; recorded on z's/params' tape when attached.
Tensor apply(const HookParams& p, const Tensor& z);
Tensor apply(const AffineMap& map, const Tensor& z);

/// (1-lambda) z + lambda (omega (.) z + bias), computed as a blend of the
/// two endpoint results so the affine-in-lambda identity holds exactly.
/// lambda = 0 returns z itself (same tensor, bitwise); lambda = 1 is apply().
Tensor apply_with_strength(const AffineMap& map, const Tensor& z, double lambda);

/// second after first at every hook: omega = w2 (.) w1, bias = w2 (.) b1 + b2.
TransportStack compose(const TransportStack& first, const TransportStack& second);

struct SupportReport {
    std::size_t count = 0;      // coordinates with omega != 1 OR bias != 0
    std::size_t sum_count = 0;  // #(omega != 1) + #(bias != 0); double-counts coords
    std::vector<std::size_t> per_hook;
};

/// tolerance 0 compares exactly — valid because the training prox produces
/// exact identity values for collapsed coordinates.
SupportReport support(const TransportStack& stack, double tolerance = 0.0);

/// Checkpoint container. Version 2 records the hash of the model file the
/// stack was trained against; version 1 files lack it and load with a warning.
struct StackFile {
    int version = 2;
    std::uint64_t model_hash = 0;
    TransportStack stack;
    json train_config_echo;  // opaque provenance blob, may be null
    std::vector<std::string> warnings;  // filled by load_stack, never saved
};

json stack_to_json(const StackFile& file);
StackFile stack_from_json(const json& j, const std::string& where);
void save_stack(const std::string& path, const StackFile& file);
StackFile load_stack(const std::string& path);

}  // namespace actsteer
