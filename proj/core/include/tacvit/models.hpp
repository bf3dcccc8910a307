#pragma once

#include <string>
#include <map>
#include <vector>

#include "tacvit/adam.hpp"
#include "tacvit/checkpoint.hpp"
#include "tacvit/config.hpp"
#include "tacvit/conv.hpp"
#include "tacvit/rng.hpp"
#include "tacvit/tensor.hpp"

namespace tacvit {

struct VitConfig {
  int64_t image_size = 64;
  int64_t patch_size = 8;
  int64_t channels = 1;
  int64_t embed_dim = 64;
  int64_t num_layers = 4;
  int64_t num_heads = 4;
  int64_t mlp_hidden = 128;
  int64_t head_layers = 4;
  std::vector<int64_t> head_hidden = {512, 256, 64};
  double dropout = 0.0;
  int64_t output_dim = 6;
  std::string pool = "cls";  // cls | mean
  int64_t lora_rank = 4;
  double lora_alpha = 8.0;

  int64_t num_patches() const {
    int64_t n = image_size / patch_size;
    return n * n;
  }
  int64_t tokens() const { return num_patches() + 1; }
  int64_t patch_len() const { return patch_size * patch_size * channels; }

  void validate() const {
    if (image_size % patch_size != 0)
      throw ConfigError("vit: image_size " + std::to_string(image_size) +
                        " not divisible by patch_size " + std::to_string(patch_size));
    if (embed_dim % num_heads != 0)
      throw ConfigError("vit: embed_dim " + std::to_string(embed_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    if (lora_rank > embed_dim / 4)
      throw ConfigError("vit: lora_rank " + std::to_string(lora_rank) + " exceeds embed_dim/4");
    if (static_cast<int64_t>(head_hidden.size()) != head_layers - 1)
      throw ConfigError("vit: head_hidden must list " + std::to_string(head_layers - 1) + " widths");
    if (pool != "cls" && pool != "mean") throw ConfigError("vit: pool must be cls or mean");
  }

  KvConfig to_config() const;
  static VitConfig from_config(const KvConfig& cfg);
};

struct CnnConfig {
  int64_t image_size = 64;
  int64_t channels = 1;
  int64_t conv_layers = 4;
  int64_t kernels_per_layer = 32;
  int64_t kernel_size = 3;
  std::string pool = "max";  // max | avg | none
  int64_t fc_layers = 2;
  int64_t fc_hidden = 512;
  double dropout = 0.0;
  int64_t output_dim = 6;

  int64_t spatial_out() const {
    int64_t s = image_size;  // stride-1 convs with same padding
    if (pool != "none")
      for (int64_t i = 0; i < conv_layers; ++i) s /= 2;
    return s;
  }

  void validate() const {
    if (conv_layers < 1) throw ConfigError("cnn: conv_layers must be >= 1");
    if (spatial_out() < 1)
      throw ConfigError("cnn: spatial size collapses below 1x1 after " +
                        std::to_string(conv_layers) + " pooled conv layers on " +
                        std::to_string(image_size) + "px input");
    if (pool != "max" && pool != "avg" && pool != "none")
      throw ConfigError("cnn: pool must be max, avg or none");
  }

  KvConfig to_config() const;
  static CnnConfig from_config(const KvConfig& cfg);
};

// Named parameter map. A tensor is trainable iff requires_grad; "frozen" is the
// complement and is what the freeze schedule toggles.
template <typename T>
class ModelParams {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    auto [it, fresh] = map_.emplace(name, std::move(t));
    if (!fresh) throw UsageError("duplicate parameter name: " + name);
    return it->second;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return map_.count(name) != 0; }
  size_t size() const { return map_.size(); }
  auto begin() { return map_.begin(); }
  auto end() { return map_.end(); }
  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [k, v] : map_) n += v.numel();
    return n;
  }

  std::vector<NamedTensor> to_named() const {
    std::vector<NamedTensor> out;
    for (const auto& [k, v] : map_) {
      NamedTensor nt;
      nt.name = k;
      nt.shape = v.shape();
      nt.values.reserve(v.value().size());
      for (auto x : v.value()) nt.values.push_back(static_cast<float>(x));
      out.push_back(std::move(nt));
    }
    return out;
  }

  void load_named(const std::vector<NamedTensor>& tensors) {
    for (const auto& nt : tensors) {
      auto& t = at(nt.name);
      if (t.shape() != nt.shape)
        throw ShapeError("checkpoint tensor " + nt.name + " has shape " + shape_str(nt.shape) +
                         ", expected " + shape_str(t.shape()));
      auto& v = t.mutable_value();
      for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(nt.values[i]);
    }
  }

 private:
  std::map<std::string, Tensor<T>> map_;
};

// --- patchify ---

// [C x H x W] -> [num_patches x P*P*C]; patches in row-major order, each row
// flattened channel-major so unpatchify is a pure index inverse.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, int64_t p) {
  if (image.rank() != 3) throw ShapeError("patchify: expects [C,H,W], got " + shape_str(image.shape()));
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h % p != 0 || w % p != 0)
    throw ConfigError("patchify: image " + shape_str(image.shape()) + " not divisible by patch " +
                      std::to_string(p));
  const int64_t ph = h / p, pw = w / p, plen = p * p * c;
  Tensor<T> out = Tensor<T>::zeros({ph * pw, plen});
  for (int64_t py = 0; py < ph; ++py)
    for (int64_t px = 0; px < pw; ++px) {
      T* row = out.mutable_value().data() + (py * pw + px) * plen;
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < p; ++y)
          for (int64_t x = 0; x < p; ++x)
            row[(ch * p + y) * p + x] = image.value()[(ch * h + py * p + y) * w + px * p + x];
    }
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, int64_t p, int64_t c, int64_t h, int64_t w) {
  if (patches.rank() != 2 || patches.dim(0) != (h / p) * (w / p) || patches.dim(1) != p * p * c)
    throw ShapeError("unpatchify: bad patch matrix " + shape_str(patches.shape()));
  const int64_t ph = h / p, pw = w / p, plen = p * p * c;
  Tensor<T> out = Tensor<T>::zeros({c, h, w});
  for (int64_t py = 0; py < ph; ++py)
    for (int64_t px = 0; px < pw; ++px) {
      const T* row = patches.value().data() + (py * pw + px) * plen;
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < p; ++y)
          for (int64_t x = 0; x < p; ++x)
            out.mutable_value()[(ch * h + py * p + y) * w + px * p + x] = row[(ch * p + y) * p + x];
    }
  return out;
}

// --- LoRA ---

template <typename T>
struct LoraAdapter {
  Tensor<T> wa;  // [d x r]
  Tensor<T> wb;  // [r x d]
  int64_t rank = 0;
  double alpha = 0.0;
  std::string target;  // "q" or "v"

  T scaling() const { return T(alpha / double(rank)); }
};

// x [R x d] through base_W [d x d] plus the low-rank update, never
// materializing the d x d delta: x*W + s * (x*W_A)*W_B.
template <typename T>
Tensor<T> lora_apply(Tape<T>& tape, const Tensor<T>& base_w, const LoraAdapter<T>& ad,
                     const Tensor<T>& x) {
  if (ad.wa.dim(0) != base_w.dim(0) || ad.wb.dim(1) != base_w.dim(1) ||
      ad.wa.dim(1) != ad.rank || ad.wb.dim(0) != ad.rank)
    throw ShapeError("lora_apply: adapter rank mismatch, W_A " + shape_str(ad.wa.shape()) +
                     " W_B " + shape_str(ad.wb.shape()));
  Tensor<T> base = matmul(tape, x, base_w);
  Tensor<T> low = matmul(tape, matmul(tape, x, ad.wa), ad.wb);
  return add(tape, base, scale(tape, low, ad.scaling()));
}

// Merge oracle: explicit W + s*W_A*W_B, for equivalence tests only.
template <typename T>
Tensor<T> lora_merge_weights(const Tensor<T>& base_w, const LoraAdapter<T>& ad) {
  const int64_t d0 = base_w.dim(0), d1 = base_w.dim(1);
  Tensor<T> merged = Tensor<T>::zeros({d0, d1});
  detail::MapM<T>(merged.mutable_value().data(), d0, d1) =
      detail::CMapM<T>(base_w.value().data(), d0, d1) +
      ad.scaling() * (detail::CMapM<T>(ad.wa.value().data(), d0, ad.rank) *
                      detail::CMapM<T>(ad.wb.value().data(), ad.rank, d1));
  return merged;
}

// --- parameter initialization ---

template <typename T>
Tensor<T> init_trunc_normal(Rng& rng, Shape shape, double stddev = 0.02) {
  auto t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.mutable_value()) v = T(rng.trunc_normal(stddev));
  return t;
}

template <typename T>
Tensor<T> init_kaiming(Rng& rng, Shape shape, int64_t fan_in) {
  auto t = Tensor<T>::zeros(std::move(shape));
  const double stddev = std::sqrt(2.0 / double(fan_in));
  for (auto& v : t.mutable_value()) v = T(rng.normal() * stddev);
  return t;
}

template <typename T>
ModelParams<T> init_vit_params(const VitConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams<T> p;
  const int64_t d = cfg.embed_dim;
  p.add("vit.embed.w", init_trunc_normal<T>(rng, {cfg.patch_len(), d}));
  p.add("vit.embed.b", Tensor<T>::zeros({d}));
  p.add("vit.pos", init_trunc_normal<T>(rng, {cfg.tokens(), d}));
  p.add("vit.cls", init_trunc_normal<T>(rng, {1, d}));
  for (int64_t i = 0; i < cfg.num_layers; ++i) {
    std::string b = "vit.block" + std::to_string(i) + ".";
    p.add(b + "ln1.g", Tensor<T>::full({d}, T{1}));
    p.add(b + "ln1.b", Tensor<T>::zeros({d}));
    for (const char* n : {"wq", "wk", "wv", "wo"}) p.add(b + "attn." + n, init_trunc_normal<T>(rng, {d, d}));
    for (const char* n : {"bq", "bk", "bv", "bo"}) p.add(b + "attn." + n, Tensor<T>::zeros({d}));
    p.add(b + "ln2.g", Tensor<T>::full({d}, T{1}));
    p.add(b + "ln2.b", Tensor<T>::zeros({d}));
    p.add(b + "mlp.w1", init_kaiming<T>(rng, {d, cfg.mlp_hidden}, d));
    p.add(b + "mlp.b1", Tensor<T>::zeros({cfg.mlp_hidden}));
    p.add(b + "mlp.w2", init_kaiming<T>(rng, {cfg.mlp_hidden, d}, cfg.mlp_hidden));
    p.add(b + "mlp.b2", Tensor<T>::zeros({d}));
  }
  p.add("vit.ln.g", Tensor<T>::full({d}, T{1}));
  p.add("vit.ln.b", Tensor<T>::zeros({d}));
  int64_t in = d;
  for (int64_t i = 0; i < cfg.head_layers; ++i) {
    int64_t out = i + 1 == cfg.head_layers ? cfg.output_dim : cfg.head_hidden[i];
    std::string l = "head.fc" + std::to_string(i) + ".";
    p.add(l + "w", init_kaiming<T>(rng, {in, out}, in));
    p.add(l + "b", Tensor<T>::zeros({out}));
    in = out;
  }
  for (auto& [k, v] : p) v.set_requires_grad(true);
  return p;
}

// W_B starts at zero so step 0 of fine-tuning reproduces the base model.
template <typename T>
void add_lora_params(ModelParams<T>& p, const VitConfig& cfg, Rng& rng) {
  const int64_t d = cfg.embed_dim, r = cfg.lora_rank;
  for (int64_t i = 0; i < cfg.num_layers; ++i) {
    std::string b = "vit.block" + std::to_string(i) + ".attn.";
    for (const char* t : {"q", "v"}) {
      p.add(b + t + ".lora.a", init_trunc_normal<T>(rng, {d, r})).set_requires_grad(true);
      p.add(b + t + ".lora.b", Tensor<T>::zeros({r, d})).set_requires_grad(true);
    }
  }
}

template <typename T>
LoraAdapter<T> lora_adapter_view(const ModelParams<T>& p, const VitConfig& cfg, int64_t block,
                                 const std::string& target) {
  LoraAdapter<T> ad;
  std::string b = "vit.block" + std::to_string(block) + ".attn." + target + ".lora.";
  ad.wa = p.at(b + "a");
  ad.wb = p.at(b + "b");
  ad.rank = cfg.lora_rank;
  ad.alpha = cfg.lora_alpha;
  ad.target = target;
  return ad;
}

template <typename T>
ModelParams<T> init_cnn_params(const CnnConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams<T> p;
  int64_t cin = cfg.channels;
  for (int64_t i = 0; i < cfg.conv_layers; ++i) {
    std::string l = "cnn.conv" + std::to_string(i) + ".";
    const int64_t fan = cin * cfg.kernel_size * cfg.kernel_size;
    p.add(l + "k", init_kaiming<T>(rng, {cfg.kernels_per_layer, cin, cfg.kernel_size, cfg.kernel_size}, fan));
    p.add(l + "b", Tensor<T>::zeros({cfg.kernels_per_layer}));
    cin = cfg.kernels_per_layer;
  }
  const int64_t s = cfg.spatial_out();
  int64_t in = cin * s * s;
  for (int64_t i = 0; i < cfg.fc_layers; ++i) {
    int64_t out = i + 1 == cfg.fc_layers ? cfg.output_dim : cfg.fc_hidden;
    std::string l = "cnn.fc" + std::to_string(i) + ".";
    p.add(l + "w", init_kaiming<T>(rng, {in, out}, in));
    p.add(l + "b", Tensor<T>::zeros({out}));
    in = out;
  }
  for (auto& [k, v] : p) v.set_requires_grad(true);
  return p;
}

// --- forward passes ---

// Scaled dot-product attention on a per-sample [T x d] token block with the
// projections already applied; splits heads by column range.
template <typename T>
Tensor<T> attention_tokens(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k,
                           const Tensor<T>& v, int64_t num_heads) {
  const int64_t d = q.dim(1), dh = d / num_heads;
  const T inv_sqrt = T{1} / std::sqrt(T(dh));
  std::vector<Tensor<T>> heads;
  heads.reserve(num_heads);
  for (int64_t h = 0; h < num_heads; ++h) {
    Tensor<T> qh = slice_cols(tape, q, h * dh, dh);
    Tensor<T> kh = slice_cols(tape, k, h * dh, dh);
    Tensor<T> vh = slice_cols(tape, v, h * dh, dh);
    Tensor<T> s = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    heads.push_back(matmul(tape, softmax_lastdim(tape, s), vh));
  }
  return concat_cols(tape, heads);
}

// Spec-shaped attention: [N x heads x T x d_h] triples.
template <typename T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 4 || q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("attention: expects matching [N,heads,T,dh], got " + shape_str(q.shape()));
  const int64_t n = q.dim(0), nh = q.dim(1), t = q.dim(2), dh = q.dim(3);
  Tensor<T> q2 = reshape(tape, q, {n * nh * t, dh});
  Tensor<T> k2 = reshape(tape, k, {n * nh * t, dh});
  Tensor<T> v2 = reshape(tape, v, {n * nh * t, dh});
  const T inv_sqrt = T{1} / std::sqrt(T(dh));
  std::vector<Tensor<T>> outs;
  outs.reserve(static_cast<size_t>(n * nh));
  for (int64_t i = 0; i < n * nh; ++i) {
    Tensor<T> qh = slice_rows(tape, q2, i * t, t);
    Tensor<T> kh = slice_rows(tape, k2, i * t, t);
    Tensor<T> vh = slice_rows(tape, v2, i * t, t);
    Tensor<T> s = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
    outs.push_back(matmul(tape, softmax_lastdim(tape, s), vh));
  }
  return reshape(tape, concat_rows(tape, outs), {n, nh, t, dh});
}

// Full TacViT forward over a batch of [C x H x W] images -> [N x output_dim].
// With use_lora, adapters sit on the query and value projections.
template <typename T>
Tensor<T> vit_forward(Tape<T>& tape, const std::vector<Tensor<T>>& images,
                      const ModelParams<T>& params, const VitConfig& cfg, bool use_lora) {
  cfg.validate();
  const int64_t n = static_cast<int64_t>(images.size());
  if (n == 0) throw UsageError("vit_forward: empty batch");
  const int64_t tk = cfg.tokens(), d = cfg.embed_dim;

  std::vector<Tensor<T>> blocks;
  blocks.reserve(images.size());
  for (const auto& img : images) {
    if (img.rank() != 3 || img.dim(0) != cfg.channels || img.dim(1) != cfg.image_size ||
        img.dim(2) != cfg.image_size)
      throw ShapeError("vit_forward: image " + shape_str(img.shape()) + " does not match config");
    Tensor<T> emb = add_rowwise(tape, matmul(tape, patchify(img, cfg.patch_size), params.at("vit.embed.w")),
                                params.at("vit.embed.b"));
    Tensor<T> toks = concat_rows(tape, {params.at("vit.cls"), emb});
    blocks.push_back(add(tape, toks, params.at("vit.pos")));
  }
  Tensor<T> x = concat_rows(tape, blocks);  // [n*tk x d]

  for (int64_t l = 0; l < cfg.num_layers; ++l) {
    std::string b = "vit.block" + std::to_string(l) + ".";
    Tensor<T> h = layernorm(tape, x, params.at(b + "ln1.g"), params.at(b + "ln1.b"));
    Tensor<T> q, v;
    if (use_lora) {
      q = lora_apply(tape, params.at(b + "attn.wq"), lora_adapter_view(params, cfg, l, "q"), h);
      v = lora_apply(tape, params.at(b + "attn.wv"), lora_adapter_view(params, cfg, l, "v"), h);
    } else {
      q = matmul(tape, h, params.at(b + "attn.wq"));
      v = matmul(tape, h, params.at(b + "attn.wv"));
    }
    q = add_rowwise(tape, q, params.at(b + "attn.bq"));
    v = add_rowwise(tape, v, params.at(b + "attn.bv"));
    Tensor<T> k = add_rowwise(tape, matmul(tape, h, params.at(b + "attn.wk")), params.at(b + "attn.bk"));

    std::vector<Tensor<T>> attn_out;
    attn_out.reserve(images.size());
    for (int64_t s = 0; s < n; ++s) {
      Tensor<T> qs = slice_rows(tape, q, s * tk, tk);
      Tensor<T> ks = slice_rows(tape, k, s * tk, tk);
      Tensor<T> vs = slice_rows(tape, v, s * tk, tk);
      attn_out.push_back(attention_tokens(tape, qs, ks, vs, cfg.num_heads));
    }
    Tensor<T> a = add_rowwise(tape, matmul(tape, concat_rows(tape, attn_out), params.at(b + "attn.wo")),
                              params.at(b + "attn.bo"));
    x = add(tape, x, a);

    Tensor<T> h2 = layernorm(tape, x, params.at(b + "ln2.g"), params.at(b + "ln2.b"));
    Tensor<T> m = gelu(tape, add_rowwise(tape, matmul(tape, h2, params.at(b + "mlp.w1")), params.at(b + "mlp.b1")));
    Tensor<T> m2 = add_rowwise(tape, matmul(tape, m, params.at(b + "mlp.w2")), params.at(b + "mlp.b2"));
    x = add(tape, x, m2);
  }
  x = layernorm(tape, x, params.at("vit.ln.g"), params.at("vit.ln.b"));

  std::vector<Tensor<T>> pooled;
  pooled.reserve(images.size());
  if (cfg.pool == "cls") {
    for (int64_t s = 0; s < n; ++s) pooled.push_back(slice_rows(tape, x, s * tk, 1));
  } else {
    Tensor<T> mean_row = Tensor<T>::full({1, tk}, T{1} / T(tk));
    for (int64_t s = 0; s < n; ++s)
      pooled.push_back(matmul(tape, mean_row, slice_rows(tape, x, s * tk, tk)));
  }
  Tensor<T> y = concat_rows(tape, pooled);  // [n x d]

  for (int64_t i = 0; i < cfg.head_layers; ++i) {
    std::string l = "head.fc" + std::to_string(i) + ".";
    y = add_rowwise(tape, matmul(tape, y, params.at(l + "w")), params.at(l + "b"));
    if (i + 1 < cfg.head_layers) y = relu(tape, y);
  }
  return y;
}

template <typename T>
Tensor<T> cnn_forward(Tape<T>& tape, const std::vector<Tensor<T>>& images,
                      const ModelParams<T>& params, const CnnConfig& cfg) {
  cfg.validate();
  if (images.empty()) throw UsageError("cnn_forward: empty batch");
  const int64_t pad = cfg.kernel_size / 2;
  std::vector<Tensor<T>> flat;
  flat.reserve(images.size());
  for (const auto& img : images) {
    if (img.rank() != 3 || img.dim(0) != cfg.channels || img.dim(1) != cfg.image_size ||
        img.dim(2) != cfg.image_size)
      throw ShapeError("cnn_forward: image " + shape_str(img.shape()) + " does not match config");
    Tensor<T> x = img;
    for (int64_t i = 0; i < cfg.conv_layers; ++i) {
      std::string l = "cnn.conv" + std::to_string(i) + ".";
      x = relu(tape, add_channel_bias(tape, conv2d(tape, x, params.at(l + "k"), 1, pad), params.at(l + "b")));
      if (cfg.pool != "none")
        x = pool2x2(tape, x, cfg.pool == "max" ? PoolKind::Max : PoolKind::Avg);
    }
    flat.push_back(reshape(tape, x, {1, x.numel()}));
  }
  Tensor<T> y = concat_rows(tape, flat);
  for (int64_t i = 0; i < cfg.fc_layers; ++i) {
    std::string l = "cnn.fc" + std::to_string(i) + ".";
    y = add_rowwise(tape, matmul(tape, y, params.at(l + "w")), params.at(l + "b"));
    if (i + 1 < cfg.fc_layers) y = relu(tape, y);
  }
  return y;
}

// --- freeze schedule ---

struct UnfreezeStep {
  int64_t epoch;
  std::vector<std::string> prefixes;
};

inline bool is_always_trainable(const std::string& name) {
  return name.rfind("head.", 0) == 0 || name.find(".lora.") != std::string::npos;
}

// At epoch e the trainable set is exactly: head.*, *.lora.*, and every
// scheduled prefix whose trigger epoch is <= e. Monotone by construction.
template <typename T>
void freeze_schedule(ModelParams<T>& params, int64_t epoch, const std::vector<UnfreezeStep>& schedule) {
  std::vector<std::string> live;
  for (const auto& step : schedule)
    for (const auto& pre : step.prefixes) {
      bool known = false;
      for (const auto& [name, t] : params)
        if (name.rfind(pre, 0) == 0) {
          known = true;
          break;
        }
      if (!known) throw ConfigError("freeze schedule: prefix matches no parameter: " + pre);
      if (step.epoch <= epoch) live.push_back(pre);
    }
  for (auto& [name, t] : params) {
    bool trainable = is_always_trainable(name);
    for (const auto& pre : live)
      if (!trainable && name.rfind(pre, 0) == 0) trainable = true;
    t.set_requires_grad(trainable);
  }
}

}  // namespace tacvit
