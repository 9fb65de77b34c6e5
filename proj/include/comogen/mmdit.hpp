#pragma once

#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "comogen/latentcodec.hpp"
#include "comogen/nn.hpp"

namespace comogen::mmdit {

using nn::Mat;

struct ModelConfig {
  int depth = 12;
  int width = 64;
  int heads = 4;
  int text_length = 8;
  int vocab_size = 9;
  int mlp_ratio = 4;
  int time_features = 64;
  // Latent token grid and channel count, normally taken from the codec.
  int latent_frames = 4;
  int latent_height = 16;
  int latent_width = 16;
  int channels = 192;
  // Typical deviation of a clean latent from its first-frame conditioning;
  // sets the output preconditioning.
  double sigma_data = 0.1;

  int video_tokens() const { return latent_frames * latent_height * latent_width; }
  int head_dim() const { return width / heads; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Cross-modal slices of the joint attention matrix, recorded per
// (layer, sampling step). t2v is heads x text x video (text rows over video
// columns); v2t is heads x video x text.
struct AttentionRecord {
  struct Entry {
    std::vector<float> t2v;
    std::vector<float> v2t;
  };

  int heads = 0;
  int text_length = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  // Sampling step the next forward call is recorded under.
  int step = 0;
  std::map<std::pair<int, int>, Entry> entries;

  int video_tokens() const { return frames * height * width; }
  bool has(int layer, int s) const { return entries.count({layer, s}) != 0; }
  const Entry& at(int layer, int s) const;
  float t2v(const Entry& e, int head, int text, int video) const {
    return e.t2v[(static_cast<std::size_t>(head) * text_length + text) * video_tokens() + video];
  }
  float v2t(const Entry& e, int head, int video, int text) const {
    return e.v2t[(static_cast<std::size_t>(head) * video_tokens() + video) * text_length + text];
  }
};

enum class Direction { t2v, v2t };

// Head-averaged map over video tokens for the subject token, T' x H' x W'
// flattened in token order ((t * H' + y) * W' + x).
std::vector<double> extract_frame_attention(const AttentionRecord& rec, int layer, int step, int subject_token_pos,
                                            Direction dir);

// Token-major view of a latent: row n = (t * H' + y) * W' + x, column c.
template <typename Real>
Mat<Real> to_tokens(const codec::LatentGrid& z);
template <typename Real>
codec::LatentGrid from_tokens(const Mat<Real>& tokens, const codec::LatentGrid& like);
template <typename Real>
codec::LatentGrid from_tokens(const Mat<Real>& tokens, int frames, int height, int width);

template <typename Real>
struct Stream {
  nn::Linear<Real> mod, q, k, v, o, mlp1, mlp2;
  nn::LayerNorm<Real> ln1, ln2;
  nn::Gelu<Real> act;
  Mat<Real> modulation;  // 1 x 4d: shift_attn, scale_attn, shift_mlp, scale_mlp

  void collect(nn::ParamList<Real>& out);
  void collect_lora(nn::ParamList<Real>& out);
};

template <typename Real>
class Block {
 public:
  Block(const ModelConfig& cfg, int index);
  void init(Rng& rng);

  // Updates the two residual streams in place. c_act is SiLU(time embedding).
  void forward(Mat<Real>& xt, Mat<Real>& xv, const Mat<Real>& c_act, bool cache, AttentionRecord::Entry* rec);
  // Replaces dxt/dxv (gradients w.r.t. the block output) with gradients
  // w.r.t. the block input and accumulates into dc_act.
  void backward(Mat<Real>& dxt, Mat<Real>& dxv, Mat<Real>& dc_act);

  void attach_lora(int rank, double alpha, Rng& rng);
  bool has_lora() const { return text_.q.has_lora(); }
  void collect(nn::ParamList<Real>& out) {
    text_.collect(out);
    video_.collect(out);
  }
  void collect_lora(nn::ParamList<Real>& out) {
    text_.collect_lora(out);
    video_.collect_lora(out);
  }
  void clear_cache();

  // Sublayers of one stream; exposed for tests.
  Stream<Real>& text() { return text_; }
  Stream<Real>& video() { return video_; }

 private:
  int width_;
  int heads_;
  int text_len_;
  Stream<Real> text_;
  Stream<Real> video_;
  Mat<Real> q_, k_, v_;
  std::vector<Mat<Real>> probs_;
};

// Output preconditioning at time t: velocity = skip * z + cond_gain * cond +
// out_gain * network. skip and cond_gain give the linear least-squares
// velocity under x0 ~ N(cond, sigma^2), out_gain its residual deviation.
struct Preconditioning {
  double skip;
  double cond_gain;
  double out_gain;
};
Preconditioning preconditioning(double t, double sigma_data);

struct ForwardOptions {
  bool cache = false;
  std::set<int> skip_layers;
  AttentionRecord* record = nullptr;
};

// Joint-attention transformer over text tokens and video latent tokens.
template <typename Real>
class Mmdit {
 public:
  explicit Mmdit(const ModelConfig& cfg);

  void init(Rng& rng);
  const ModelConfig& config() const { return cfg_; }

  // latent: Nv x C tokens; cond: (H' * W') x C first-frame tokens broadcast
  // over latent frames; tokens: caption ids. Returns the velocity (Nv x C).
  Mat<Real> forward(const Mat<Real>& latent, const Mat<Real>& cond, std::span<const int> tokens, double t,
                    const ForwardOptions& opt);
  // Backpropagates dL/dvelocity through the last cached forward; returns
  // dL/dlatent (Nv x C).
  Mat<Real> backward(const Mat<Real>& d_out);

  codec::LatentGrid velocity(const codec::LatentGrid& latent, const codec::LatentGrid& first_frame,
                             std::span<const int> tokens, double t, const ForwardOptions& opt);

  void attach_lora(const std::set<int>& layers, int rank, double alpha, Rng& rng);
  const std::set<int>& lora_layers() const { return lora_layers_; }
  int lora_rank() const { return lora_rank_; }
  double lora_alpha() const { return lora_alpha_; }

  nn::ParamList<Real> base_parameters();
  nn::ParamList<Real> lora_parameters();
  std::size_t base_parameter_count();
  std::size_t lora_parameter_count();

  void set_base_trainable(bool on);
  void set_lora_trainable(bool on);
  void clear_cache();

  Block<Real>& block(int i) { return blocks_.at(i); }
  nn::Linear<Real>& head() { return head_; }
  nn::Linear<Real>& patch_embed() { return patch_; }

 private:
  ModelConfig cfg_;
  nn::Linear<Real> patch_;
  nn::Param<Real> pos_t_, pos_y_, pos_x_;
  nn::Param<Real> text_embed_, text_pos_;
  nn::Linear<Real> time1_, time2_;
  nn::Silu<Real> time_act_, c_act_;
  std::vector<Block<Real>> blocks_;
  nn::Linear<Real> final_mod_, head_;
  nn::LayerNorm<Real> final_ln_;
  Mat<Real> final_mod_out_;

  std::vector<int> last_tokens_;
  std::vector<bool> active_;
  Mat<Real> c_act_out_;
  Preconditioning precond_{};

  std::set<int> lora_layers_;
  int lora_rank_ = 0;
  double lora_alpha_ = 0.0;
};

template <typename Real>
Mat<Real> timestep_features(double t, int dim);



// Copies parameter values between models of possibly different precision.
// Both must have identical structure (including LoRA attachment).
template <typename To, typename From>
void copy_parameters(const nn::ParamList<From>& src, const nn::ParamList<To>& dst) {
  if (src.size() != dst.size()) throw DimensionError("copy_parameters: parameter lists differ in length");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i]->name != dst[i]->name || src[i]->value.rows() != dst[i]->value.rows() ||
        src[i]->value.cols() != dst[i]->value.cols())
      throw DimensionError("copy_parameters: mismatch at " + src[i]->name);
    dst[i]->value = src[i]->value.template cast<To>();
  }
}

}  // namespace comogen::mmdit
