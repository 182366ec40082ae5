#pragma once

#include <string>
#include <vector>

#include "pelta/autograd.hpp"
#include "pelta/graph.hpp"

namespace pelta {

struct TinyViTSpec {
  int image_size = 16;
  int patch_size = 8;
  int embed_dim = 8;
  int n_heads = 2;
  int n_blocks = 1;
  int n_classes = 2;
  int channels = 1;
  int mlp_hidden = 0;  // 0 -> 2 * embed_dim

  int tokens() const { return (image_size / patch_size) * (image_size / patch_size) + 1; }
  int hidden() const { return mlp_hidden > 0 ? mlp_hidden : 2 * embed_dim; }
};

/// How a shielded stem's boundary adjoint maps back to image space.
enum class UpsampleKind { dense, conv, token_grid };

struct Model {
  std::string name;
  Graph graph;
  ParamMap params;
  NodeId logits = 0;
  std::vector<std::vector<NodeId>> attn_heads;  // [block][head]
  std::vector<std::string> stem_labels;         // default shield prefix
  UpsampleKind upsample = UpsampleKind::dense;
  int stem_kernel = 0, stem_stride = 1, stem_pad = 0;
  Shape stem_out_shape;  // feature-map shape right after the shielded stem
  int patch = 0;

  Model clone() const {
    Model m = *this;
    m.graph.clear_values();
    return m;
  }
};

Model build_mlp(uint64_t seed, int image_size = 16, int channels = 1, int n_classes = 2);
Model build_ws_cnn(uint64_t seed, int image_size = 16, int channels = 1, int n_classes = 2);
Model build_resnet_stem_cnn(uint64_t seed, int image_size = 16, int channels = 1,
                            int n_classes = 2);
Model build_tiny_vit(const TinyViTSpec& spec, uint64_t seed);

/// Architecture description for the memory estimator; parameters are never
/// materialized (the graph would hold ~300M floats).
Graph vit_l16_description();

/// Runs the graph for (x, y) and returns the loss.
double model_loss(Model& m, const Tensor& x, int y);
/// argmax over logits (any target works; the head does not depend on it)
int predict(Model& m, const Tensor& x);

struct EnsembleModel {
  Model cnn;  // member k
  Model vit;  // member v
  uint64_t selection_seed = 0;
};

/// Uniform random member choice per sample. Returns (label, member index)
/// with 0 = cnn, 1 = vit.
std::pair<int, int> ensemble_predict(EnsembleModel& e, const Tensor& x, Rng& coin);

/// Per-block, per-head row-stochastic attention matrices from the last
/// forward pass.
using AttentionTrace = std::vector<std::vector<Tensor>>;
AttentionTrace attention_trace(const Graph& g, const std::vector<std::vector<NodeId>>& heads);

/// prod_l [ sum_i (0.5 W_{l,i} + 0.5 I) ], block 1 applied first (rightmost
/// factor). Head sums are not renormalized.
Tensor attention_rollout(const AttentionTrace& trace);

/// Maps a tokens x tokens rollout to image space: class-token row over patch
/// tokens, reshaped to the patch grid, nearest-neighbor upsampled, broadcast
/// over channels.
Tensor rollout_to_image(const Tensor& rollout, int patch, int image_size, int channels);

// flat binary checkpoint: magic "PZOO", version u32, then per parameter
// (name_len u32, name, rank u32, dims u32..., f64 data little-endian)
void save_checkpoint(const Model& m, const std::string& path);
void load_checkpoint(Model& m, const std::string& path);

}  // namespace pelta
