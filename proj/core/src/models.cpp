#include "tacvit/models.hpp"

#include <sstream>

namespace tacvit {

KvConfig VitConfig::to_config() const {
  KvConfig c;
  c.set("vit.image_size", image_size);
  c.set("vit.patch_size", patch_size);
  c.set("vit.channels", channels);
  c.set("vit.embed_dim", embed_dim);
  c.set("vit.num_layers", num_layers);
  c.set("vit.num_heads", num_heads);
  c.set("vit.mlp_hidden", mlp_hidden);
  c.set("vit.head_layers", head_layers);
  std::ostringstream hh;
  for (size_t i = 0; i < head_hidden.size(); ++i) hh << (i ? "," : "") << head_hidden[i];
  c.set("vit.head_hidden", hh.str());
  c.set("vit.dropout", dropout);
  c.set("vit.output_dim", output_dim);
  c.set("vit.pool", pool);
  c.set("vit.lora_rank", lora_rank);
  c.set("vit.lora_alpha", lora_alpha);
  return c;
}

VitConfig VitConfig::from_config(const KvConfig& c) {
  VitConfig v;
  v.image_size = c.get_int("vit.image_size", v.image_size);
  v.patch_size = c.get_int("vit.patch_size", v.patch_size);
  v.channels = c.get_int("vit.channels", v.channels);
  v.embed_dim = c.get_int("vit.embed_dim", v.embed_dim);
  v.num_layers = c.get_int("vit.num_layers", v.num_layers);
  v.num_heads = c.get_int("vit.num_heads", v.num_heads);
  v.mlp_hidden = c.get_int("vit.mlp_hidden", v.mlp_hidden);
  v.head_layers = c.get_int("vit.head_layers", v.head_layers);
  if (auto hh = c.get("vit.head_hidden")) {
    v.head_hidden.clear();
    std::istringstream is(*hh);
    std::string tok;
    while (std::getline(is, tok, ',')) v.head_hidden.push_back(std::stoll(tok));
  }
  v.dropout = c.get_real("vit.dropout", v.dropout);
  v.output_dim = c.get_int("vit.output_dim", v.output_dim);
  v.pool = c.get_str("vit.pool", v.pool);
  v.lora_rank = c.get_int("vit.lora_rank", v.lora_rank);
  v.lora_alpha = c.get_real("vit.lora_alpha", v.lora_alpha);
  v.validate();
  return v;
}

KvConfig CnnConfig::to_config() const {
  KvConfig c;
  c.set("cnn.image_size", image_size);
  c.set("cnn.channels", channels);
  c.set("cnn.conv_layers", conv_layers);
  c.set("cnn.kernels_per_layer", kernels_per_layer);
  c.set("cnn.kernel_size", kernel_size);
  c.set("cnn.pool", pool);
  c.set("cnn.fc_layers", fc_layers);
  c.set("cnn.fc_hidden", fc_hidden);
  c.set("cnn.dropout", dropout);
  c.set("cnn.output_dim", output_dim);
  return c;
}

CnnConfig CnnConfig::from_config(const KvConfig& c) {
  CnnConfig v;
  v.image_size = c.get_int("cnn.image_size", v.image_size);
  v.channels = c.get_int("cnn.channels", v.channels);
  v.conv_layers = c.get_int("cnn.conv_layers", v.conv_layers);
  v.kernels_per_layer = c.get_int("cnn.kernels_per_layer", v.kernels_per_layer);
  v.kernel_size = c.get_int("cnn.kernel_size", v.kernel_size);
  v.pool = c.get_str("cnn.pool", v.pool);
  v.fc_layers = c.get_int("cnn.fc_layers", v.fc_layers);
  v.fc_hidden = c.get_int("cnn.fc_hidden", v.fc_hidden);
  v.dropout = c.get_real("cnn.dropout", v.dropout);
  v.output_dim = c.get_int("cnn.output_dim", v.output_dim);
  v.validate();
  return v;
}

}  // namespace tacvit
