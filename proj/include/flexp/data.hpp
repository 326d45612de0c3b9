#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "flexp/tensor.hpp"

namespace flexp {

/// Synthetic federation with task shift (per-client rotation of shared class
/// prototypes) and label skew (per-client Dirichlet label mix).
struct FederationSpec {
  std::size_t num_clients = 5;
  std::size_t input_dim = 32;
  std::size_t num_classes = 8;
  std::size_t samples_per_client = 400;
  /// Upper bound on the per-client rotation angle, in [0, pi]. Client n turns
  /// by theta_max * u_n with u_n drawn from [n/N, (n+1)/N).
  double theta_max = 1.2;
  /// Dirichlet concentration of each client's label distribution. Larger is
  /// closer to uniform.
  double label_skew_alpha = 1.0;
  double noise_sigma = 0.3;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  /// Throws InputError naming the offending field.
  void validate() const;
  friend bool operator==(const FederationSpec&, const FederationSpec&) = default;
};

/// Rows of `x` are samples; `origin` is the client each sample came from.
struct Dataset {
  Tensor x;
  std::vector<int> labels;
  std::vector<int> origin;

  std::size_t size() const noexcept { return labels.size(); }
};

struct ClientShard {
  Dataset train;
  Dataset test;
  std::vector<double> label_distribution;
  /// Rotation angle applied to this client's prototypes (shared planes).
  double theta = 0.0;
  /// Rotated class prototypes, [K, input_dim].
  Tensor prototypes;
};

struct Federation {
  FederationSpec spec;
  /// Shared class prototypes before rotation, [K, input_dim].
  Tensor prototypes;
  std::vector<ClientShard> clients;
};

Federation generate_federation(const FederationSpec& spec);

/// Concatenation of every client's test shard (origin tags preserved).
Dataset global_test_set(const Federation& federation);
/// Concatenation of every client's train shard.
Dataset pooled_train_set(const Federation& federation);

/// Mean over client pairs of the mean distance between their rotated
/// prototypes of the same class.
double mean_prototype_displacement(const Federation& federation);

/// CSV export, header `client_id,split,label,x_0..x_{d-1}`.
void write_federation_csv(const Federation& federation, std::ostream& out);

struct Batch {
  Tensor x;
  std::vector<int> labels;
};

/// Deterministic minibatches: reshuffles the index order every epoch.
class BatchSampler {
 public:
  BatchSampler(const Dataset& data, std::size_t batch_size, std::uint64_t seed);
  Batch next();

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Rows `indices` of `data` as a batch.
Batch gather(const Dataset& data, const std::vector<std::size_t>& indices);
/// Whole dataset as one batch.
Batch as_batch(const Dataset& data);

}  // namespace flexp
