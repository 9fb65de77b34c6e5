#include "comogen/mmdit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace comogen::mmdit {

void ModelConfig::validate() const {
  if (depth < 2) throw RangeError("model depth must be >= 2");
  if (width <= 0 || heads <= 0 || width % heads != 0) throw RangeError("model width must be divisible by heads");
  if (text_length < 1 || vocab_size < 1) throw RangeError("text length and vocabulary must be non-empty");
  if (time_features % 2 != 0) throw RangeError("time feature count must be even");
  if (!(sigma_data > 0.0)) throw RangeError("sigma_data must be positive");
  if (latent_frames < 1 || latent_height < 1 || latent_width < 1 || channels < 1)
    throw RangeError("latent grid must be non-empty");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"depth", depth},
          {"width", width},
          {"heads", heads},
          {"text_length", text_length},
          {"vocab_size", vocab_size},
          {"mlp_ratio", mlp_ratio},
          {"time_features", time_features},
          {"latent_frames", latent_frames},
          {"latent_height", latent_height},
          {"latent_width", latent_width},
          {"channels", channels},
          {"sigma_data", sigma_data}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  const std::map<std::string, int*> ints = {{"depth", &c.depth},
                                            {"width", &c.width},
                                            {"heads", &c.heads},
                                            {"text_length", &c.text_length},
                                            {"vocab_size", &c.vocab_size},
                                            {"mlp_ratio", &c.mlp_ratio},
                                            {"time_features", &c.time_features},
                                            {"latent_frames", &c.latent_frames},
                                            {"latent_height", &c.latent_height},
                                            {"latent_width", &c.latent_width},
                                            {"channels", &c.channels}};
  for (const auto& [key, value] : j.items()) {
    if (auto it = ints.find(key); it != ints.end())
      *it->second = value.get<int>();
    else if (key == "sigma_data")
      c.sigma_data = value.get<double>();
    else
      throw FormatError("unknown key model." + key);
  }
  c.validate();
  return c;
}

const AttentionRecord::Entry& AttentionRecord::at(int layer, int s) const {
  auto it = entries.find({layer, s});
  if (it == entries.end())
    throw Error("missing attention record for layer " + std::to_string(layer) + " step " + std::to_string(s));
  return it->second;
}

std::vector<double> extract_frame_attention(const AttentionRecord& rec, int layer, int step, int subject_token_pos,
                                            Direction dir) {
  const auto& e = rec.at(layer, step);
  if (subject_token_pos < 0 || subject_token_pos >= rec.text_length)
    throw RangeError("subject token position out of range");
  const int nv = rec.video_tokens();
  std::vector<double> map(nv, 0.0);
  for (int h = 0; h < rec.heads; ++h)
    for (int n = 0; n < nv; ++n)
      map[n] += dir == Direction::t2v ? rec.t2v(e, h, subject_token_pos, n) : rec.v2t(e, h, n, subject_token_pos);
  for (auto& v : map) v /= rec.heads;
  return map;
}

template <typename Real>
Mat<Real> to_tokens(const codec::LatentGrid& z) {
  const int n = z.tokens();
  Mat<Real> m(n, z.channels);
  for (int c = 0; c < z.channels; ++c) {
    const float* src = z.data.data() + static_cast<std::size_t>(c) * n;
    for (int i = 0; i < n; ++i) m(i, c) = static_cast<Real>(src[i]);
  }
  return m;
}

template <typename Real>
codec::LatentGrid from_tokens(const Mat<Real>& tokens, int frames, int height, int width) {
  if (tokens.rows() != static_cast<Eigen::Index>(frames) * height * width)
    throw DimensionError("token count does not match the latent grid");
  codec::LatentGrid z(static_cast<int>(tokens.cols()), frames, height, width);
  const int n = z.tokens();
  for (int c = 0; c < z.channels; ++c) {
    float* dst = z.data.data() + static_cast<std::size_t>(c) * n;
    for (int i = 0; i < n; ++i) dst[i] = static_cast<float>(tokens(i, c));
  }
  return z;
}

template <typename Real>
codec::LatentGrid from_tokens(const Mat<Real>& tokens, const codec::LatentGrid& like) {
  return from_tokens<Real>(tokens, like.frames, like.height, like.width);
}

template <typename Real>
Mat<Real> timestep_features(double t, int dim) {
  // Sinusoidal features of 1000 * t, half cosine and half sine.
  Mat<Real> f(1, dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    const double arg = 1000.0 * t * freq;
    f(0, i) = static_cast<Real>(std::cos(arg));
    f(0, half + i) = static_cast<Real>(std::sin(arg));
  }
  return f;
}

template <typename Real>
void Stream<Real>::collect(nn::ParamList<Real>& out) {
  for (auto* l : {&mod, &q, &k, &v, &o, &mlp1, &mlp2}) l->collect(out);
}

template <typename Real>
void Stream<Real>::collect_lora(nn::ParamList<Real>& out) {
  for (auto* l : {&q, &k, &v, &o}) l->collect_lora(out);
}

namespace {

template <typename Real>
Stream<Real> make_stream(const std::string& prefix, int d, int hidden) {
  Stream<Real> s;
  s.mod = nn::Linear<Real>(prefix + ".mod", d, 4 * d);
  s.q = nn::Linear<Real>(prefix + ".q", d, d);
  s.k = nn::Linear<Real>(prefix + ".k", d, d);
  s.v = nn::Linear<Real>(prefix + ".v", d, d);
  s.o = nn::Linear<Real>(prefix + ".o", d, d);
  s.mlp1 = nn::Linear<Real>(prefix + ".mlp1", d, hidden);
  s.mlp2 = nn::Linear<Real>(prefix + ".mlp2", hidden, d);
  return s;
}

template <typename Real>
void modulate(Mat<Real>& h, const Mat<Real>& y, const Mat<Real>& mod, int shift_at, int scale_at, int d) {
  h = y;
  for (Eigen::Index r = 0; r < h.rows(); ++r)
    h.row(r).array() = y.row(r).array() * (Real(1) + mod.block(0, scale_at, 1, d).array()) +
                       mod.block(0, shift_at, 1, d).array();
}

// Backward of h = y * (1 + scale) + shift. Writes dshift/dscale into dmod.
template <typename Real>
Mat<Real> modulate_backward(const Mat<Real>& dh, const Mat<Real>& y, const Mat<Real>& mod, Mat<Real>& dmod,
                            int shift_at, int scale_at, int d) {
  dmod.block(0, shift_at, 1, d) += dh.colwise().sum();
  dmod.block(0, scale_at, 1, d) += (dh.array() * y.array()).colwise().sum().matrix();
  Mat<Real> dy = dh;
  const auto gain = (Real(1) + mod.block(0, scale_at, 1, d).array()).matrix();
  for (Eigen::Index r = 0; r < dy.rows(); ++r) dy.row(r).array() *= gain.array();
  return dy;
}

}  // namespace

template <typename Real>
Block<Real>::Block(const ModelConfig& cfg, int index)
    : width_(cfg.width), heads_(cfg.heads), text_len_(cfg.text_length) {
  const std::string prefix = "blocks." + std::to_string(index);
  text_ = make_stream<Real>(prefix + ".text", cfg.width, cfg.width * cfg.mlp_ratio);
  video_ = make_stream<Real>(prefix + ".video", cfg.width, cfg.width * cfg.mlp_ratio);
}

template <typename Real>
void Block<Real>::init(Rng& rng) {
  for (auto* s : {&text_, &video_}) {
    for (auto* l : {&s->q, &s->k, &s->v, &s->o, &s->mlp1, &s->mlp2}) l->init_xavier(rng);
    // Identity modulation at initialization.
    s->mod.weight().value.setZero();
    s->mod.bias().value.setZero();
  }
}

template <typename Real>
void Block<Real>::forward(Mat<Real>& xt, Mat<Real>& xv, const Mat<Real>& c_act, bool cache,
                          AttentionRecord::Entry* rec) {
  const int d = width_;
  const int nt = static_cast<int>(xt.rows());
  const int nv = static_cast<int>(xv.rows());
  const int n = nt + nv;
  const int dh = d / heads_;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

  Mat<Real> q(n, d), k(n, d), v(n, d);
  auto project = [&](Stream<Real>& s, const Mat<Real>& x, int row0) {
    s.modulation = s.mod.forward(c_act, cache);
    const Mat<Real> y = s.ln1.forward(x, cache);
    Mat<Real> h;
    modulate(h, y, s.modulation, 0, d, d);
    q.middleRows(row0, x.rows()) = s.q.forward(h, cache);
    k.middleRows(row0, x.rows()) = s.k.forward(h, cache);
    v.middleRows(row0, x.rows()) = s.v.forward(h, cache);
  };
  project(text_, xt, 0);
  project(video_, xv, nt);

  Mat<Real> attn(n, d);
  if (cache) probs_.resize(heads_);
  if (rec) {
    rec->t2v.assign(static_cast<std::size_t>(heads_) * nt * nv, 0.0f);
    rec->v2t.assign(static_cast<std::size_t>(heads_) * nv * nt, 0.0f);
  }
  q *= scale;
  Mat<Real> scratch;
  for (int h = 0; h < heads_; ++h) {
    Mat<Real>& p = cache ? probs_[h] : scratch;
    p.resize(n, n);
    p.noalias() = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    nn::softmax_rows(p);
    attn.middleCols(h * dh, dh).noalias() = p * v.middleCols(h * dh, dh);
    if (rec) {
      for (int i = 0; i < nt; ++i)
        for (int j = 0; j < nv; ++j)
          rec->t2v[(static_cast<std::size_t>(h) * nt + i) * nv + j] = static_cast<float>(p(i, nt + j));
      for (int j = 0; j < nv; ++j)
        for (int i = 0; i < nt; ++i)
          rec->v2t[(static_cast<std::size_t>(h) * nv + j) * nt + i] = static_cast<float>(p(nt + j, i));
    }
  }
  if (cache) {
    q_ = std::move(q);
    k_ = std::move(k);
    v_ = std::move(v);
  }

  auto finish = [&](Stream<Real>& s, Mat<Real>& x, int row0) {
    x.noalias() += s.o.forward(attn.middleRows(row0, x.rows()), cache);
    const Mat<Real> y = s.ln2.forward(x, cache);
    Mat<Real> h;
    modulate(h, y, s.modulation, 2 * d, 3 * d, d);
    x.noalias() += s.mlp2.forward(s.act.forward(s.mlp1.forward(h, cache), cache), cache);
  };
  finish(text_, xt, 0);
  finish(video_, xv, nt);
}

template <typename Real>
void Block<Real>::backward(Mat<Real>& dxt, Mat<Real>& dxv, Mat<Real>& dc_act) {
  const int d = width_;
  const int nt = static_cast<int>(dxt.rows());
  const int nv = static_cast<int>(dxv.rows());
  const int n = nt + nv;
  const int dh = d / heads_;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));

  Mat<Real> dattn(n, d);
  Mat<Real> dmod_t = Mat<Real>::Zero(1, 4 * d), dmod_v = Mat<Real>::Zero(1, 4 * d);

  // MLP branch then output projection, per stream. dx becomes the gradient
  // at the attention residual.
  auto mlp_back = [&](Stream<Real>& s, Mat<Real>& dx, Mat<Real>& dmod, int row0) {
    const Mat<Real> dh2 = s.mlp1.backward(s.act.backward(s.mlp2.backward(dx)));
    const Mat<Real> dy2 = modulate_backward(dh2, s.ln2.y, s.modulation, dmod, 2 * d, 3 * d, d);
    dx.noalias() += s.ln2.backward(dy2);
    dattn.middleRows(row0, dx.rows()) = s.o.backward(dx);
  };
  mlp_back(text_, dxt, dmod_t, 0);
  mlp_back(video_, dxv, dmod_v, nt);

  Mat<Real> dq(n, d), dk(n, d), dv(n, d);
  Mat<Real> dp(n, n);
  for (int h = 0; h < heads_; ++h) {
    const Mat<Real>& p = probs_[h];
    const auto dout = dattn.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * dout;
    dp.noalias() = dout * v_.middleCols(h * dh, dh).transpose();
    for (Eigen::Index r = 0; r < n; ++r) {
      const Real dotp = p.row(r).dot(dp.row(r));
      dp.row(r).array() = p.row(r).array() * (dp.row(r).array() - dotp);
    }
    dq.middleCols(h * dh, dh).noalias() = dp * k_.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dp.transpose() * q_.middleCols(h * dh, dh);
  }
  dq *= scale;

  auto proj_back = [&](Stream<Real>& s, Mat<Real>& dx, Mat<Real>& dmod, int row0, int rows) {
    Mat<Real> dh1 = s.q.backward(dq.middleRows(row0, rows));
    dh1.noalias() += s.k.backward(dk.middleRows(row0, rows));
    dh1.noalias() += s.v.backward(dv.middleRows(row0, rows));
    const Mat<Real> dy1 = modulate_backward(dh1, s.ln1.y, s.modulation, dmod, 0, d, d);
    dx.noalias() += s.ln1.backward(dy1);
    dc_act.noalias() += s.mod.backward(dmod);
  };
  proj_back(text_, dxt, dmod_t, 0, nt);
  proj_back(video_, dxv, dmod_v, nt, nv);
}

template <typename Real>
void Block<Real>::attach_lora(int rank, double alpha, Rng& rng) {
  if (has_lora()) throw Error("LoRA already attached to this block");
  for (auto* s : {&text_, &video_})
    for (auto* l : {&s->q, &s->k, &s->v, &s->o}) {
      const std::string name = l->weight().name;
      l->attach_lora(name.substr(0, name.size() - std::string(".weight").size()), rank, alpha, rng);
    }
}

template <typename Real>
void Block<Real>::clear_cache() {
  probs_.clear();
  q_.resize(0, 0);
  k_.resize(0, 0);
  v_.resize(0, 0);
  for (auto* s : {&text_, &video_}) {
    for (auto* l : {&s->mod, &s->q, &s->k, &s->v, &s->o, &s->mlp1, &s->mlp2}) l->clear_cache();
    s->ln1 = {};
    s->ln2 = {};
    s->act = {};
  }
}

template <typename Real>
Mmdit<Real>::Mmdit(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg.width;
  patch_ = nn::Linear<Real>("patch_embed", 2 * cfg.channels, d);
  pos_t_ = nn::Param<Real>("pos_t", cfg.latent_frames, d);
  pos_y_ = nn::Param<Real>("pos_y", cfg.latent_height, d);
  pos_x_ = nn::Param<Real>("pos_x", cfg.latent_width, d);
  text_embed_ = nn::Param<Real>("text_embed", cfg.vocab_size, d);
  text_pos_ = nn::Param<Real>("text_pos", cfg.text_length, d);
  time1_ = nn::Linear<Real>("time_mlp1", cfg.time_features, d);
  time2_ = nn::Linear<Real>("time_mlp2", d, d);
  for (int i = 0; i < cfg.depth; ++i) blocks_.emplace_back(cfg, i);
  final_mod_ = nn::Linear<Real>("final_mod", d, 2 * d);
  head_ = nn::Linear<Real>("head", d, cfg.channels);
}

template <typename Real>
void Mmdit<Real>::init(Rng& rng) {
  patch_.init_xavier(rng);
  nn::fill_normal(pos_t_.value, rng, 0.2);
  nn::fill_normal(pos_y_.value, rng, 0.2);
  nn::fill_normal(pos_x_.value, rng, 0.2);
  nn::fill_normal(text_embed_.value, rng, 1.0);
  nn::fill_normal(text_pos_.value, rng, 0.2);
  time1_.init_xavier(rng);
  time2_.init_xavier(rng);
  for (auto& b : blocks_) b.init(rng);
  final_mod_.weight().value.setZero();
  final_mod_.bias().value.setZero();
  head_.weight().value.setZero();
  head_.bias().value.setZero();
}

template <typename Real>
Mat<Real> Mmdit<Real>::forward(const Mat<Real>& latent, const Mat<Real>& cond, std::span<const int> tokens, double t,
                               const ForwardOptions& opt) {
  const int nv = cfg_.video_tokens();
  const int hw = cfg_.latent_height * cfg_.latent_width;
  const int c = cfg_.channels;
  const int d = cfg_.width;
  if (latent.rows() != nv || latent.cols() != c)
    throw DimensionError("latent tokens must be " + std::to_string(nv) + "x" + std::to_string(c) + ", got " +
                         std::to_string(latent.rows()) + "x" + std::to_string(latent.cols()));
  if (cond.rows() != hw || cond.cols() != c) throw DimensionError("first-frame conditioning has the wrong shape");
  if (static_cast<int>(tokens.size()) != cfg_.text_length)
    throw DimensionError("caption length " + std::to_string(tokens.size()) + " != text length " +
                         std::to_string(cfg_.text_length));
  for (int s : opt.skip_layers)
    if (s < 0 || s >= cfg_.depth) throw RangeError("skip layer index " + std::to_string(s) + " out of range");
  for (int tok : tokens)
    if (tok < 0 || tok >= cfg_.vocab_size) throw RangeError("token id out of vocabulary");
  if (!std::isfinite(t)) throw RangeError("timestep is not finite");

  Mat<Real> input(nv, 2 * c);
  input.leftCols(c) = latent;
  for (int n = 0; n < nv; ++n) input.row(n).rightCols(c) = cond.row(n % hw);
  Mat<Real> xv = patch_.forward(input, opt.cache);
  for (int n = 0; n < nv; ++n) {
    const int tt = n / hw, y = (n % hw) / cfg_.latent_width, x = n % cfg_.latent_width;
    xv.row(n) += pos_t_.value.row(tt) + pos_y_.value.row(y) + pos_x_.value.row(x);
  }
  Mat<Real> xt(cfg_.text_length, d);
  for (int i = 0; i < cfg_.text_length; ++i) xt.row(i) = text_embed_.value.row(tokens[i]) + text_pos_.value.row(i);

  const Mat<Real> temb = time2_.forward(time_act_.forward(time1_.forward(timestep_features<Real>(t, cfg_.time_features), opt.cache), opt.cache), opt.cache);
  const Mat<Real> c_act = c_act_.forward(temb, opt.cache);

  if (opt.record) {
    opt.record->heads = cfg_.heads;
    opt.record->text_length = cfg_.text_length;
    opt.record->frames = cfg_.latent_frames;
    opt.record->height = cfg_.latent_height;
    opt.record->width = cfg_.latent_width;
  }
  active_.assign(cfg_.depth, false);
  for (int l = 0; l < cfg_.depth; ++l) {
    if (opt.skip_layers.count(l)) continue;
    active_[l] = true;
    AttentionRecord::Entry* entry = opt.record ? &opt.record->entries[{l, opt.record->step}] : nullptr;
    blocks_[l].forward(xt, xv, c_act, opt.cache, entry);
  }

  const Mat<Real> fm = final_mod_.forward(c_act, opt.cache);
  const Mat<Real> y = final_ln_.forward(xv, opt.cache);
  Mat<Real> h;
  modulate(h, y, fm, 0, d, d);
  if (opt.cache) {
    final_mod_out_ = fm;
    c_act_out_ = c_act;
    last_tokens_.assign(tokens.begin(), tokens.end());
  }
  const Preconditioning pc = preconditioning(t, cfg_.sigma_data);
  Mat<Real> out = head_.forward(h, opt.cache);
  out *= static_cast<Real>(pc.out_gain);
  out.noalias() += static_cast<Real>(pc.skip) * latent;
  const Real cond_gain = static_cast<Real>(pc.cond_gain);
  for (int n = 0; n < nv; ++n) out.row(n) += cond_gain * cond.row(n % hw);
  if (opt.cache) precond_ = pc;
  return out;
}

template <typename Real>
Mat<Real> Mmdit<Real>::backward(const Mat<Real>& d_out) {
  const int d = cfg_.width;
  const int c = cfg_.channels;
  const int hw = cfg_.latent_height * cfg_.latent_width;
  if (last_tokens_.empty()) throw Error("backward called without a cached forward pass");

  Mat<Real> dc_act = Mat<Real>::Zero(1, d);
  Mat<Real> dfm = Mat<Real>::Zero(1, 2 * d);
  const Mat<Real> dh = head_.backward(static_cast<Real>(precond_.out_gain) * d_out);
  const Mat<Real> dy = modulate_backward(dh, final_ln_.y, final_mod_out_, dfm, 0, d, d);
  Mat<Real> dxv = final_ln_.backward(dy);
  dc_act.noalias() += final_mod_.backward(dfm);
  Mat<Real> dxt = Mat<Real>::Zero(cfg_.text_length, d);

  for (int l = cfg_.depth - 1; l >= 0; --l)
    if (active_[l]) blocks_[l].backward(dxt, dxv, dc_act);

  const Mat<Real> dtemb = c_act_.backward(dc_act);
  time1_.backward(time_act_.backward(time2_.backward(dtemb)), false);

  for (int i = 0; i < cfg_.text_length; ++i) {
    if (text_embed_.trainable) text_embed_.grad.row(last_tokens_[i]) += dxt.row(i);
    if (text_pos_.trainable) text_pos_.grad.row(i) += dxt.row(i);
  }
  const int nv = cfg_.video_tokens();
  if (pos_t_.trainable) {
    for (int n = 0; n < nv; ++n) {
      const int tt = n / hw, y = (n % hw) / cfg_.latent_width, x = n % cfg_.latent_width;
      pos_t_.grad.row(tt) += dxv.row(n);
      pos_y_.grad.row(y) += dxv.row(n);
      pos_x_.grad.row(x) += dxv.row(n);
    }
  }
  const Mat<Real> din = patch_.backward(dxv);
  Mat<Real> dlatent = din.leftCols(c);
  dlatent.noalias() += static_cast<Real>(precond_.skip) * d_out;
  return dlatent;
}

template <typename Real>
codec::LatentGrid Mmdit<Real>::velocity(const codec::LatentGrid& latent, const codec::LatentGrid& first_frame,
                                        std::span<const int> tokens, double t, const ForwardOptions& opt) {
  if (latent.channels != cfg_.channels || latent.frames != cfg_.latent_frames ||
      latent.height != cfg_.latent_height || latent.width != cfg_.latent_width)
    throw DimensionError("latent grid does not match the model configuration");
  const Mat<Real> out = forward(to_tokens<Real>(latent), to_tokens<Real>(first_frame), tokens, t, opt);
  return from_tokens<Real>(out, latent);
}

template <typename Real>
void Mmdit<Real>::attach_lora(const std::set<int>& layers, int rank, double alpha, Rng& rng) {
  if (layers.empty()) throw RangeError("attach_lora: empty layer set");
  if (rank < 1) throw RangeError("attach_lora: rank must be >= 1");
  if (!lora_layers_.empty()) throw Error("attach_lora: LoRA is already attached");
  for (int l : layers)
    if (l < 0 || l >= cfg_.depth) throw RangeError("attach_lora: layer " + std::to_string(l) + " out of range");
  for (int l : layers) blocks_[l].attach_lora(rank, alpha, rng);
  lora_layers_ = layers;
  lora_rank_ = rank;
  lora_alpha_ = alpha;
}

template <typename Real>
nn::ParamList<Real> Mmdit<Real>::base_parameters() {
  nn::ParamList<Real> out;
  patch_.collect(out);
  for (auto* p : {&pos_t_, &pos_y_, &pos_x_, &text_embed_, &text_pos_}) out.push_back(p);
  time1_.collect(out);
  time2_.collect(out);
  for (auto& b : blocks_) b.collect(out);
  final_mod_.collect(out);
  head_.collect(out);
  return out;
}

template <typename Real>
nn::ParamList<Real> Mmdit<Real>::lora_parameters() {
  nn::ParamList<Real> out;
  for (auto& b : blocks_) b.collect_lora(out);
  return out;
}

template <typename Real>
std::size_t Mmdit<Real>::base_parameter_count() {
  std::size_t n = 0;
  for (auto* p : base_parameters()) n += static_cast<std::size_t>(p->size());
  return n;
}

template <typename Real>
std::size_t Mmdit<Real>::lora_parameter_count() {
  std::size_t n = 0;
  for (auto* p : lora_parameters()) n += static_cast<std::size_t>(p->size());
  return n;
}

template <typename Real>
void Mmdit<Real>::set_base_trainable(bool on) {
  for (auto* p : base_parameters()) p->trainable = on;
}

template <typename Real>
void Mmdit<Real>::set_lora_trainable(bool on) {
  for (auto* p : lora_parameters()) p->trainable = on;
}

template <typename Real>
void Mmdit<Real>::clear_cache() {
  for (auto& b : blocks_) b.clear_cache();
  for (auto* l : {&patch_, &time1_, &time2_, &final_mod_, &head_}) l->clear_cache();
  final_ln_ = {};
  time_act_ = {};
  c_act_ = {};
  last_tokens_.clear();
}

Preconditioning preconditioning(double t, double sigma_data) {
  const double s2 = sigma_data * sigma_data;
  const double u = 1.0 - t;
  const double denom = u * u * s2 + t * t;
  const double k = (u * s2 - t) / denom;
  return {k, 1.0 - u * k, sigma_data / std::sqrt(denom)};
}

template class Block<float>;
template class Block<double>;
template class Mmdit<float>;
template class Mmdit<double>;
template Mat<float> to_tokens<float>(const codec::LatentGrid&);
template Mat<double> to_tokens<double>(const codec::LatentGrid&);
template codec::LatentGrid from_tokens<float>(const Mat<float>&, const codec::LatentGrid&);
template codec::LatentGrid from_tokens<double>(const Mat<double>&, const codec::LatentGrid&);
template codec::LatentGrid from_tokens<float>(const Mat<float>&, int, int, int);
template codec::LatentGrid from_tokens<double>(const Mat<double>&, int, int, int);
template Mat<float> timestep_features<float>(double, int);
template Mat<double> timestep_features<double>(double, int);

}  // namespace comogen::mmdit
