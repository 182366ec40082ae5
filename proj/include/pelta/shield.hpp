#pragma once

#include <atomic>
#include <memory>
#include <set>
#include <utility>

#include "pelta/autograd.hpp"
#include "pelta/graph.hpp"

namespace pelta {

enum class FlushMode { worst_case_retain, flush_after_use };

struct SelectPolicy {
  enum class Kind { first_k_transforms, named_prefix };
  Kind kind = Kind::first_k_transforms;
  int k = 1;
  std::vector<std::string> names;

  static SelectPolicy first_k(int k) {
    SelectPolicy p;
    p.kind = Kind::first_k_transforms;
    p.k = k;
    return p;
  }
  static SelectPolicy prefix(std::vector<std::string> names) {
    SelectPolicy p;
    p.kind = Kind::named_prefix;
    p.names = std::move(names);
    return p;
  }
};

/// The deepest masked nodes. Every member is a transform (i > l) and the set
/// cuts all input-to-loss paths.
struct ShieldSelection {
  std::vector<NodeId> frontier;
};

ShieldSelection select(const Graph& g, const SelectPolicy& policy);

/// Everything held inside the simulated TEE: masked node values and the
/// input-adjacent local jacobians.
struct Enclave {
  std::set<NodeId> masked_values;
  std::set<std::pair<NodeId, NodeId>> masked_jacobians;  // (j, i) edge labels
  std::vector<NodeId> frontier;
  FlushMode flush_mode = FlushMode::worst_case_retain;

  bool operator==(const Enclave& o) const {
    return masked_values == o.masked_values && masked_jacobians == o.masked_jacobians &&
           frontier == o.frontier;
  }
};

/// Counts attacker queries that named a masked quantity. Shared so a whole
/// attack campaign can be audited with one log.
struct AccessLog {
  std::atomic<long> masked_attempts{0};
  void record() { masked_attempts.fetch_add(1, std::memory_order_relaxed); }
  long count() const { return masked_attempts.load(std::memory_order_relaxed); }
};

/// The restricted-white-box lens. Graph structure (kinds, shapes, edges) is
/// visible; values, parameters, and jacobians behind the mask are not. The one
/// backward quantity granted is the adjoint of the shallowest clear node.
class AttackerView {
 public:
  AttackerView(const Graph& g, Enclave enclave, std::shared_ptr<AccessLog> log);

  const Graph& topology() const { return *graph_; }
  const Enclave& enclave() const { return enclave_; }
  bool is_masked(NodeId id) const { return enclave_.masked_values.count(id) != 0; }

  const Tensor& value(const Graph& run, NodeId id) const;
  const Tensor& param(const ParamMap& params, NodeId id) const;
  const Tensor& attention_weights(const Graph& run, NodeId id) const;
  void check_jacobian(NodeId j, NodeId i) const;

  /// Shallowest clear node (unique clear transform with a masked parent).
  NodeId boundary() const;
  const std::vector<NodeId>& boundary_nodes() const { return boundary_; }

  /// Clear-side reverse pass seeded at `from`; propagation stops at the
  /// boundary, so nothing masked is touched. Returns the boundary adjoint.
  Tensor boundary_adjoint(Graph& run, NodeId from, const Tensor& seed) const;

  std::shared_ptr<AccessLog> log() const { return log_; }

 private:
  [[noreturn]] void deny(const std::string& what) const;
  const Graph* graph_;
  Enclave enclave_;
  std::vector<NodeId> boundary_;
  std::shared_ptr<AccessLog> log_;
};

std::pair<Enclave, AttackerView> pelta_shield(const Graph& g, const ShieldSelection& sel,
                                              std::shared_ptr<AccessLog> log = nullptr);

/// delta_{L+1}: the true loss adjoint at the shallowest clear node for (x, y).
/// The pass is computed honestly; only quantities beyond the boundary are
/// withheld.
Tensor attacker_gradient(const AttackerView& view, Graph& g, const Tensor& x, int y,
                         const ParamMap& params);

struct MemoryReport {
  int64_t weights_bytes = 0;
  int64_t biases_bytes = 0;
  int64_t activations_bytes = 0;
  int64_t gradients_bytes = 0;
  int64_t jacobians_bytes = 0;
  int64_t total_bytes = 0;
  double shielded_fraction = 0.0;  // shielded floats / total model parameter floats
  FlushMode mode = FlushMode::worst_case_retain;
  int batch = 1;
  std::string to_text() const;  // one row per category, bytes and MB columns
};

/// Table-style accounting at 4 bytes per held scalar. worst_case_retain keeps
/// weights, biases, activations (including the masked input copy) and one
/// gradient per held value; flush_after_use keeps weights and biases only.
/// Input-adjacent jacobians are parameterized by already-held weights and add
/// no bytes; the printed rules state this.
MemoryReport estimate_enclave_memory(const Graph& g, const Enclave& enclave, FlushMode mode,
                                     int batch = 1);

}  // namespace pelta
