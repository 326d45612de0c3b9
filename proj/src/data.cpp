#include "flexp/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <cstdio>
#include <ostream>
#include <string>

#include "flexp/error.hpp"

namespace flexp {

void FederationSpec::validate() const {
  if (num_clients < 1) throw InputError("federation.num_clients must be >= 1");
  if (input_dim < 1) throw InputError("federation.input_dim must be >= 1");
  if (num_classes < 2) throw InputError("federation.num_classes must be >= 2");
  if (samples_per_client < 2) throw InputError("federation.samples_per_client must be >= 2");
  if (!(theta_max >= 0.0 && theta_max <= std::numbers::pi)) throw InputError("federation.theta_max must lie in [0, pi]");
  if (!(label_skew_alpha > 0.0)) throw InputError("federation.label_skew_alpha must be > 0");
  if (!(noise_sigma >= 0.0)) throw InputError("federation.noise_sigma must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InputError("federation.train_fraction must lie in (0, 1)");
  const auto train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(samples_per_client)));
  if (train == 0 || train == samples_per_client) {
    throw InputError("federation.train_fraction leaves an empty train or test split");
  }
}

namespace {

using Matrix = std::vector<std::vector<double>>;

// Random orthonormal basis via Gram-Schmidt on Gaussian vectors (rows).
Matrix random_orthonormal(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix basis;
  while (basis.size() < d) {
    std::vector<double> v(d);
    for (double& x : v) x = n01(rng);
    for (const auto& b : basis) {
      const double dot = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * b[i];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

// Rotation by `theta` in each consecutive plane (b0,b1), (b2,b3), ... of the
// basis, so every vector orthogonal to an odd leftover axis turns by theta.
std::vector<double> rotate(const Matrix& basis, double theta, const double* v, std::size_t d) {
  std::vector<double> coords(d);
  for (std::size_t i = 0; i < d; ++i) coords[i] = std::inner_product(v, v + d, basis[i].begin(), 0.0);
  const double c = std::cos(theta), s = std::sin(theta);
  for (std::size_t i = 0; i + 1 < d; i += 2) {
    const double a = coords[i], b = coords[i + 1];
    coords[i] = c * a - s * b;
    coords[i + 1] = s * a + c * b;
  }
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += coords[i] * basis[i][j];
  return out;
}

std::vector<double> dirichlet(std::size_t k, double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (double& x : p) total += (x = gamma(rng));
  if (!(total > 0.0)) {
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(k));
    return p;
  }
  for (double& x : p) x /= total;
  return p;
}

Dataset make_dataset(std::size_t n, std::size_t d) {
  Dataset ds;
  ds.x = Tensor({n, d});
  ds.labels.resize(n);
  ds.origin.resize(n);
  return ds;
}

Dataset concat(const std::vector<const Dataset*>& parts) {
  std::size_t n = 0, d = 0;
  for (const Dataset* p : parts) {
    n += p->size();
    if (p->size()) d = p->x.dim(1);
  }
  Dataset out = make_dataset(n, d);
  std::size_t row = 0;
  for (const Dataset* p : parts) {
    std::copy(p->x.data().begin(), p->x.data().end(), out.x.data().begin() + row * d);
    std::copy(p->labels.begin(), p->labels.end(), out.labels.begin() + row);
    std::copy(p->origin.begin(), p->origin.end(), out.origin.begin() + row);
    row += p->size();
  }
  return out;
}

}  // namespace

Federation generate_federation(const FederationSpec& spec) {
  spec.validate();
  const std::size_t d = spec.input_dim, K = spec.num_classes;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> n01(0.0, 1.0);

  Federation fed;
  fed.spec = spec;
  fed.prototypes = Tensor({K, d});
  const double proto_scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : fed.prototypes.data()) v = n01(rng) * proto_scale;

  const auto train_n =
      static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(spec.samples_per_client)));
  // One rotation basis for the whole federation; client n turns every plane by
  // theta_max * u_n with u_n stratified over [0, 1). Pairwise prototype
  // displacement is then 2 sin(|theta_a - theta_b| / 2) |mu|, strictly
  // increasing in theta_max because |theta_a - theta_b| <= theta_max <= pi.
  const Matrix basis = random_orthonormal(d, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 0; c < spec.num_clients; ++c) {
    std::mt19937_64 crng(spec.seed ^ (0x9E3779B97F4A7C15ULL * (c + 1)));
    ClientShard shard;
    const double u = (static_cast<double>(c) + unit(crng)) / static_cast<double>(spec.num_clients);
    shard.theta = spec.theta_max * u;
    std::vector<std::vector<double>> rotated(K);
    for (std::size_t k = 0; k < K; ++k) rotated[k] = rotate(basis, shard.theta, &fed.prototypes[k * d], d);
    shard.label_distribution = dirichlet(K, spec.label_skew_alpha, crng);
    std::discrete_distribution<int> label_dist(shard.label_distribution.begin(), shard.label_distribution.end());

    Dataset all = make_dataset(spec.samples_per_client, d);
    for (std::size_t i = 0; i < spec.samples_per_client; ++i) {
      const int y = label_dist(crng);
      all.labels[i] = y;
      all.origin[i] = static_cast<int>(c);
      for (std::size_t j = 0; j < d; ++j) all.x[i * d + j] = rotated[y][j] + spec.noise_sigma * n01(crng);
    }
    std::vector<std::size_t> train_idx(train_n), test_idx(spec.samples_per_client - train_n);
    std::iota(train_idx.begin(), train_idx.end(), 0);
    std::iota(test_idx.begin(), test_idx.end(), train_n);
    Batch train = gather(all, train_idx);
    shard.train = Dataset{std::move(train.x), std::move(train.labels), std::vector<int>(train_n, static_cast<int>(c))};
    Batch test = gather(all, test_idx);
    shard.test = Dataset{std::move(test.x), std::move(test.labels), std::vector<int>(test_idx.size(), static_cast<int>(c))};
    shard.prototypes = Tensor({K, d});
    for (std::size_t k = 0; k < K; ++k) std::copy(rotated[k].begin(), rotated[k].end(), &shard.prototypes[k * d]);
    fed.clients.push_back(std::move(shard));
  }
  return fed;
}

Dataset global_test_set(const Federation& federation) {
  std::vector<const Dataset*> parts;
  for (const ClientShard& c : federation.clients) parts.push_back(&c.test);
  return concat(parts);
}

Dataset pooled_train_set(const Federation& federation) {
  std::vector<const Dataset*> parts;
  for (const ClientShard& c : federation.clients) parts.push_back(&c.train);
  return concat(parts);
}

double mean_prototype_displacement(const Federation& federation) {
  const std::size_t d = federation.spec.input_dim, K = federation.spec.num_classes;
  const auto& cs = federation.clients;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < cs.size(); ++a)
    for (std::size_t b = a + 1; b < cs.size(); ++b) {
      for (std::size_t k = 0; k < K; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = cs[a].prototypes[k * d + j] - cs[b].prototypes[k * d + j];
          s += diff * diff;
        }
        total += std::sqrt(s);
      }
      pairs += K;
    }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

void write_federation_csv(const Federation& federation, std::ostream& out) {
  const std::size_t d = federation.spec.input_dim;
  out << "client_id,split,label";
  for (std::size_t j = 0; j < d; ++j) out << ",x_" << j;
  out << '\n';
  char buf[32];
  for (std::size_t c = 0; c < federation.clients.size(); ++c) {
    for (const auto* part : {&federation.clients[c].train, &federation.clients[c].test}) {
      const char* split = part == &federation.clients[c].train ? "train" : "test";
      for (std::size_t i = 0; i < part->size(); ++i) {
        out << c << ',' << split << ',' << part->labels[i];
        for (std::size_t j = 0; j < d; ++j) {
          std::snprintf(buf, sizeof buf, "%.17g", part->x[i * d + j]);
          out << ',' << buf;
        }
        out << '\n';
      }
    }
  }
}

BatchSampler::BatchSampler(const Dataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), rng_(seed), order_(data.size()) {
  if (data.size() == 0) throw InputError("BatchSampler: empty dataset");
  if (batch_size == 0) throw InputError("BatchSampler: batch size must be >= 1");
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

Batch BatchSampler::next() {
  std::vector<std::size_t> idx;
  idx.reserve(batch_size_);
  while (idx.size() < batch_size_) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    idx.push_back(order_[cursor_++]);
  }
  return gather(*data_, idx);
}

Batch gather(const Dataset& data, const std::vector<std::size_t>& indices) {
  const std::size_t d = data.x.dim(1);
  Batch b{Tensor({indices.size(), d}), {}};
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    std::copy_n(data.x.data().begin() + i * d, d, b.x.data().begin() + r * d);
    b.labels.push_back(data.labels[i]);
  }
  return b;
}

Batch as_batch(const Dataset& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return gather(data, idx);
}

}  // namespace flexp
