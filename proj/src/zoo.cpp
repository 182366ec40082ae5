#include "pelta/zoo.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace pelta {

namespace {

Attrs weight_attrs(int fan_in) { return {{"fan_in", static_cast<double>(fan_in)}}; }
Attrs bias_attrs(int fan_in) {
  return {{"fan_in", static_cast<double>(fan_in)}, {"bias", 1.0}};
}

// classifier tail shared by the CNN stems: pool -> flatten -> dense -> loss
struct Tail {
  NodeId logits;
  NodeId loss;
};

Tail dense_head(GraphBuilder& b, NodeId feat, int feat_dim, int n_classes) {
  NodeId w = b.param({feat_dim, n_classes}, "head.w", weight_attrs(feat_dim));
  NodeId bi = b.param({n_classes}, "head.b", bias_attrs(feat_dim));
  NodeId logits = b.op(OpKind::Add, {b.op(OpKind::MatMul, {feat, w}, {}, "head"), bi}, {},
                       "head_bias");
  NodeId loss = b.op(OpKind::CrossEntropyLoss, {logits}, {}, "loss");
  return {logits, loss};
}

}  // namespace

Model build_mlp(uint64_t seed, int image_size, int channels, int n_classes) {
  int d = channels * image_size * image_size;
  int h1 = 32, h2 = 16;
  GraphBuilder b;
  NodeId x = b.input({channels, image_size, image_size}, "input");
  NodeId flat = b.op(OpKind::Reshape, {x}, reshape_attrs({d}), "flatten");
  NodeId w1 = b.param({d, h1}, "fc1.w", weight_attrs(d));
  NodeId b1 = b.param({h1}, "fc1.b", bias_attrs(d));
  NodeId a1 = b.op(OpKind::ReLU,
                   {b.op(OpKind::Add, {b.op(OpKind::MatMul, {flat, w1}, {}, "fc1"), b1}, {},
                         "fc1_bias")},
                   {}, "fc1_relu");
  NodeId w2 = b.param({h1, h2}, "fc2.w", weight_attrs(h1));
  NodeId b2 = b.param({h2}, "fc2.b", bias_attrs(h1));
  NodeId a2 = b.op(OpKind::ReLU,
                   {b.op(OpKind::Add, {b.op(OpKind::MatMul, {a1, w2}, {}, "fc2"), b2}, {},
                         "fc2_bias")},
                   {}, "fc2_relu");
  Tail tail = dense_head(b, a2, h2, n_classes);

  Model m;
  m.name = "mlp";
  m.graph = b.build(tail.loss);
  m.logits = *m.graph.find_label("head_bias");
  m.params = init_params(m.graph, seed);
  m.stem_labels = {"flatten", "fc1", "fc1_bias", "fc1_relu"};
  m.upsample = UpsampleKind::dense;
  return m;
}

namespace {

// shared stem geometry: 4x4 stride-2 convolution halves the grid and inverts
// exactly under a transposed convolution of the same geometry
constexpr int kStemCh = 8, kStemK = 4, kStemS = 2, kStemP = 1;

Model finish_cnn(GraphBuilder& b, NodeId feat_map, const char* name, uint64_t seed,
                 std::vector<std::string> stem_labels, int image_size, int n_classes) {
  int half = image_size / 2;
  int feat_dim = kStemCh * half * half;
  NodeId flat = b.op(OpKind::Reshape, {feat_map}, reshape_attrs({feat_dim}), "flatten");
  Tail tail = dense_head(b, flat, feat_dim, n_classes);
  Model m;
  m.name = name;
  m.graph = b.build(tail.loss);
  m.logits = *m.graph.find_label("head_bias");
  m.params = init_params(m.graph, seed);
  m.stem_labels = std::move(stem_labels);
  m.upsample = UpsampleKind::conv;
  m.stem_kernel = kStemK;
  m.stem_stride = kStemS;
  m.stem_pad = kStemP;
  m.stem_out_shape = {kStemCh, half, half};
  return m;
}

}  // namespace

Model build_ws_cnn(uint64_t seed, int image_size, int channels, int n_classes) {
  GraphBuilder b;
  NodeId x = b.input({channels, image_size, image_size}, "input");
  int fan = channels * kStemK * kStemK;
  NodeId w = b.param({kStemCh, channels, kStemK, kStemK}, "stem.w", weight_attrs(fan));
  NodeId bi = b.param({kStemCh}, "stem.b", bias_attrs(fan));
  // padding folded into the convolution geometry
  NodeId conv = b.op(OpKind::WeightStandardizedConv2d, {x, w, bi},
                     {{"stride", double(kStemS)}, {"pad", double(kStemP)}}, "stem_wsconv");
  NodeId act = b.op(OpKind::ReLU, {conv}, {}, "stem_relu");
  return finish_cnn(b, act, "ws_cnn", seed, {"stem_wsconv"}, image_size, n_classes);
}

Model build_resnet_stem_cnn(uint64_t seed, int image_size, int channels, int n_classes) {
  GraphBuilder b;
  NodeId x = b.input({channels, image_size, image_size}, "input");
  int fan = channels * kStemK * kStemK;
  NodeId w = b.param({kStemCh, channels, kStemK, kStemK}, "stem.w", weight_attrs(fan));
  NodeId bi = b.param({kStemCh}, "stem.b", bias_attrs(fan));
  NodeId conv = b.op(OpKind::Conv2d, {x, w, bi},
                     {{"stride", double(kStemS)}, {"pad", double(kStemP)}}, "stem_conv");
  NodeId gamma = b.param({kStemCh}, "stem.bn.gamma", {{"init", 2.0}});
  NodeId beta = b.param({kStemCh}, "stem.bn.beta", {{"init", 1.0}, {"bias", 1.0}});
  NodeId rmean = b.param({kStemCh}, "stem.bn.mean", {{"init", 1.0}, {"trainable", 0.0}});
  NodeId rvar = b.param({kStemCh}, "stem.bn.var", {{"init", 2.0}, {"trainable", 0.0}});
  NodeId bn = b.op(OpKind::BatchNorm, {conv, gamma, beta, rmean, rvar}, {}, "stem_bn");
  NodeId act = b.op(OpKind::ReLU, {bn}, {}, "stem_relu");
  return finish_cnn(b, act, "resnet_cnn", seed, {"stem_conv", "stem_bn", "stem_relu"},
                    image_size, n_classes);
}

namespace {

struct VitBuild {
  Graph graph;
  NodeId logits;
  std::vector<std::vector<NodeId>> attn_heads;
};

VitBuild build_vit_graph(const TinyViTSpec& s) {
  if (s.image_size % s.patch_size != 0)
    throw GraphError("image size must be divisible by patch size");
  if (s.embed_dim % s.n_heads != 0)
    throw GraphError("embed dim must be divisible by head count");
  int d = s.embed_dim;
  int dh = d / s.n_heads;
  int patch_dim = s.channels * s.patch_size * s.patch_size;
  int tokens = s.tokens();

  GraphBuilder b;
  NodeId x = b.input({s.channels, s.image_size, s.image_size}, "input");
  NodeId emb = b.param({patch_dim, d}, "patch_embed.E", weight_attrs(patch_dim));
  NodeId cls = b.param({1, d}, "cls_token", weight_attrs(d));
  NodeId pos = b.param({tokens, d}, "pos_embed", weight_attrs(d));
  NodeId pe = b.op(OpKind::PatchEmbed, {x, emb}, {{"patch", double(s.patch_size)}},
                   "patch_embed");
  NodeId cat = b.op(OpKind::Concat, {cls, pe}, {{"axis", 0.0}}, "concat_cls");
  NodeId z = b.op(OpKind::PositionAdd, {cat, pos}, {}, "pos_add");

  for (int blk = 0; blk < s.n_blocks; ++blk) {
    std::string pre = "blk" + std::to_string(blk) + ".";
    NodeId g1 = b.param({d}, pre + "ln1.gamma", {{"init", 2.0}});
    NodeId be1 = b.param({d}, pre + "ln1.beta", {{"init", 1.0}, {"bias", 1.0}});
    NodeId ln1 = b.op(OpKind::LayerNorm, {z, g1, be1}, {}, pre + "ln1");
    std::vector<NodeId> heads;
    for (int h = 0; h < s.n_heads; ++h) {
      std::string hp = pre + "head" + std::to_string(h) + ".";
      NodeId wq = b.param({d, dh}, hp + "wq", weight_attrs(d));
      NodeId wk = b.param({d, dh}, hp + "wk", weight_attrs(d));
      NodeId wv = b.param({d, dh}, hp + "wv", weight_attrs(d));
      NodeId head = b.op(OpKind::AttentionHead, {ln1, wq, wk, wv}, {},
                         pre + "head" + std::to_string(h));
      heads.push_back(head);
    }
    NodeId merged = heads.size() == 1
                        ? heads[0]
                        : b.op(OpKind::Concat, heads, {{"axis", 1.0}}, pre + "heads");
    NodeId wo = b.param({d, d}, pre + "wo", weight_attrs(d));
    NodeId bo = b.param({d}, pre + "bo", bias_attrs(d));
    NodeId proj = b.op(OpKind::Add, {b.op(OpKind::MatMul, {merged, wo}, {}, pre + "proj"), bo},
                       {}, pre + "proj_bias");
    NodeId res1 = b.op(OpKind::Add, {z, proj}, {}, pre + "res1");
    NodeId g2 = b.param({d}, pre + "ln2.gamma", {{"init", 2.0}});
    NodeId be2 = b.param({d}, pre + "ln2.beta", {{"init", 1.0}, {"bias", 1.0}});
    NodeId ln2 = b.op(OpKind::LayerNorm, {res1, g2, be2}, {}, pre + "ln2");
    int hidden = s.hidden();
    NodeId w1 = b.param({d, hidden}, pre + "mlp.w1", weight_attrs(d));
    NodeId b1 = b.param({hidden}, pre + "mlp.b1", bias_attrs(d));
    NodeId m1 = b.op(OpKind::Add, {b.op(OpKind::MatMul, {ln2, w1}, {}, pre + "mlp1"), b1}, {},
                     pre + "mlp1_bias");
    NodeId a1 = b.op(OpKind::ReLU, {m1}, {}, pre + "mlp_relu");
    NodeId w2 = b.param({hidden, d}, pre + "mlp.w2", weight_attrs(hidden));
    NodeId b2 = b.param({d}, pre + "mlp.b2", bias_attrs(hidden));
    NodeId m2 = b.op(OpKind::Add, {b.op(OpKind::MatMul, {a1, w2}, {}, pre + "mlp2"), b2}, {},
                     pre + "mlp2_bias");
    z = b.op(OpKind::Add, {res1, m2}, {}, pre + "res2");
  }

  NodeId gf = b.param({d}, "ln_f.gamma", {{"init", 2.0}});
  NodeId bf = b.param({d}, "ln_f.beta", {{"init", 1.0}, {"bias", 1.0}});
  NodeId lnf = b.op(OpKind::LayerNorm, {z, gf, bf}, {}, "ln_f");
  // class-token readout via a fixed one-hot selector row
  NodeId sel = b.param({1, tokens}, "cls_select", {{"init", 3.0}, {"trainable", 0.0}});
  NodeId cls_row = b.op(OpKind::MatMul, {sel, lnf}, {}, "cls_row");
  NodeId cls_vec = b.op(OpKind::Reshape, {cls_row}, reshape_attrs({d}), "cls_vec");
  Tail tail = dense_head(b, cls_vec, d, s.n_classes);

  VitBuild out;
  out.graph = b.build(tail.loss);
  out.logits = *out.graph.find_label("head_bias");
  // builder handles are renumbered by build(); resolve head ids by label
  for (int blk = 0;; ++blk) {
    std::vector<NodeId> ids;
    for (int h = 0;; ++h) {
      auto id = out.graph.find_label("blk" + std::to_string(blk) + ".head" + std::to_string(h));
      if (!id) break;
      ids.push_back(*id);
    }
    if (ids.empty()) break;
    out.attn_heads.push_back(ids);
  }
  return out;
}

}  // namespace

Model build_tiny_vit(const TinyViTSpec& spec, uint64_t seed) {
  VitBuild vb = build_vit_graph(spec);
  Model m;
  m.name = "tiny_vit";
  m.graph = std::move(vb.graph);
  m.logits = vb.logits;
  m.attn_heads = std::move(vb.attn_heads);
  m.params = init_params(m.graph, seed);
  m.stem_labels = {"patch_embed", "concat_cls", "pos_add"};
  m.upsample = UpsampleKind::token_grid;
  m.patch = spec.patch_size;
  return m;
}

Graph vit_l16_description() {
  TinyViTSpec s;
  s.image_size = 224;
  s.patch_size = 16;
  s.embed_dim = 1024;
  s.n_heads = 16;
  s.n_blocks = 24;
  s.n_classes = 1000;
  s.channels = 3;
  s.mlp_hidden = 4096;
  return build_vit_graph(s).graph;
}

double model_loss(Model& m, const Tensor& x, int y) {
  m.graph.set_target(y);
  forward(m.graph, x, m.params);
  return m.graph.value(m.graph.loss_node())[0];
}

int predict(Model& m, const Tensor& x) {
  m.graph.set_target(0);
  forward(m.graph, x, m.params);
  return argmax(m.graph.value(m.logits));
}

std::pair<int, int> ensemble_predict(EnsembleModel& e, const Tensor& x, Rng& coin) {
  int member = coin.coin() ? 1 : 0;
  int label = member == 0 ? predict(e.cnn, x) : predict(e.vit, x);
  return {label, member};
}

AttentionTrace attention_trace(const Graph& g,
                               const std::vector<std::vector<NodeId>>& heads) {
  AttentionTrace trace;
  for (const auto& blk : heads) {
    std::vector<Tensor> row;
    for (NodeId id : blk) row.push_back(g.aux(id));
    trace.push_back(std::move(row));
  }
  return trace;
}

Tensor attention_rollout(const AttentionTrace& trace) {
  if (trace.empty()) throw Error("attention trace is empty");
  int t = trace[0][0].dim(0);
  Tensor rollout({t, t});
  for (int i = 0; i < t; ++i) rollout.at(i, i) = 1.0;
  for (const auto& blk : trace) {
    Tensor mixed({t, t});
    for (const Tensor& w : blk)
      for (int64_t i = 0; i < mixed.size(); ++i) mixed[i] += 0.5 * w[i];
    for (int i = 0; i < t; ++i) mixed.at(i, i) += 0.5 * static_cast<double>(blk.size());
    // block applied on the left: later blocks end up leftmost
    Tensor next({t, t});
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) {
        double acc = 0.0;
        for (int k = 0; k < t; ++k) acc += mixed.at(i, k) * rollout.at(k, j);
        next.at(i, j) = acc;
      }
    rollout = std::move(next);
  }
  return rollout;
}

Tensor rollout_to_image(const Tensor& rollout, int patch, int image_size, int channels) {
  int grid = image_size / patch;
  int n_patches = grid * grid;
  if (rollout.dim(0) != n_patches + 1)
    throw ShapeError("rollout size does not match the patch grid");
  Tensor img({channels, image_size, image_size});
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      int gy = y / patch, gx = x / patch;
      double v = rollout.at(0, 1 + gy * grid + gx);  // class-token row, patch tokens
      for (int c = 0; c < channels; ++c) img.at(c, y, x) = v;
    }
  return img;
}

namespace {

void write_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<char*>(b), 4);
}

uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw DataError("checkpoint truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f64(std::ofstream& f, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<char*>(b), 8);
}

double read_f64(std::ifstream& f) {
  unsigned char b[8];
  f.read(reinterpret_cast<char*>(b), 8);
  if (!f) throw DataError("checkpoint truncated");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint for writing: " + path);
  f.write("PZOO", 4);
  write_u32(f, 1);
  for (NodeId id : m.graph.parameter_nodes()) {
    const Node& nd = m.graph.node(id);
    const Tensor& t = m.params.at(id);
    write_u32(f, static_cast<uint32_t>(nd.label.size()));
    f.write(nd.label.data(), static_cast<std::streamsize>(nd.label.size()));
    write_u32(f, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_u32(f, static_cast<uint32_t>(t.dim(i)));
    for (int64_t i = 0; i < t.size(); ++i) write_f64(f, t[i]);
  }
  if (!f) throw DataError("checkpoint write failed: " + path);
}

void load_checkpoint(Model& m, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::strncmp(magic, "PZOO", 4) != 0)
    throw DataError("bad checkpoint magic in " + path);
  uint32_t version = read_u32(f);
  if (version != 1) throw DataError("unsupported checkpoint version");
  ParamMap loaded;
  while (true) {
    f.peek();
    if (f.eof()) break;
    uint32_t name_len = read_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw DataError("checkpoint truncated");
    uint32_t rank = read_u32(f);
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(read_u32(f)));
    Tensor t(shape);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = read_f64(f);
    auto id = m.graph.find_label(name);
    if (!id) throw DataError("checkpoint names unknown parameter '" + name + "'");
    if (t.shape() != m.graph.node(*id).shape)
      throw DataError("checkpoint shape mismatch for '" + name + "'");
    loaded.emplace(*id, std::move(t));
  }
  for (NodeId id : m.graph.parameter_nodes())
    if (!loaded.count(id))
      throw DataError("checkpoint is missing parameter '" + m.graph.node(id).label + "'");
  m.params = std::move(loaded);
}

}  // namespace pelta
