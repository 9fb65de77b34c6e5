#include "comogen/motionlayers.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "comogen/error.hpp"

namespace comogen::motion {

using json = nlohmann::json;

SelectionRule parse_rule(const std::string& name) {
  if (name == "fixed-k") return SelectionRule::fixed_k;
  if (name == "largest-gap") return SelectionRule::largest_gap;
  throw RangeError("unknown selection rule '" + name + "' (expected fixed-k or largest-gap)");
}

std::string rule_name(SelectionRule r) { return r == SelectionRule::fixed_k ? "fixed-k" : "largest-gap"; }

MaskSource parse_mask_source(const std::string& name) {
  if (name == "generated") return MaskSource::generated;
  if (name == "reference") return MaskSource::reference;
  throw RangeError("unknown mask source '" + name + "' (expected generated or reference)");
}

namespace {

std::vector<int> descending(std::span<const double> scores) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

std::vector<int> LayerRanking::order() const { return descending(scores); }

json LayerRanking::to_json() const {
  return {{"scores", scores},
          {"dispersion", dispersion},
          {"selected", selected},
          {"rule", rule_name(rule)},
          {"tie_fallback", tie_fallback},
          {"samples", samples},
          {"order", order()}};
}

LayerRanking LayerRanking::from_json(const json& j) {
  LayerRanking r;
  r.scores = j.at("scores").get<std::vector<double>>();
  r.dispersion = j.value("dispersion", std::vector<double>(r.scores.size(), 0.0));
  r.selected = j.at("selected").get<std::vector<int>>();
  r.rule = parse_rule(j.value("rule", std::string("largest-gap")));
  r.tie_fallback = j.value("tie_fallback", false);
  r.samples = j.value("samples", 0);
  if (r.scores.empty()) throw FormatError("ranking has no scores");
  if (r.selected.empty()) throw FormatError("ranking selects no layers");
  for (int l : r.selected)
    if (l < 0 || l >= static_cast<int>(r.scores.size())) throw FormatError("ranking selects an unknown layer");
  return r;
}

std::string LayerRanking::table() const {
  std::ostringstream os;
  os << "layer     score       std  motion\n";
  for (std::size_t l = 0; l < scores.size(); ++l) {
    const bool motion = std::find(selected.begin(), selected.end(), static_cast<int>(l)) != selected.end();
    os << std::setw(5) << l << std::fixed << std::setprecision(6) << std::setw(10) << scores[l] << std::setw(10)
       << (l < dispersion.size() ? dispersion[l] : 0.0) << (motion ? "  *" : "") << "\n";
  }
  os << "rule " << rule_name(rule) << (tie_fallback ? " (tie, fixed-k fallback)" : "") << ", " << samples
     << " samples\n";
  return os.str();
}

ScoreAccumulator::ScoreAccumulator(int layers)
    : layers_(layers), inside_(layers, 0.0), terms_(layers, 0.0), per_sample_(layers) {
  if (layers < 1) throw RangeError("score accumulator needs at least one layer");
}

void ScoreAccumulator::add(const mmdit::AttentionRecord& rec, int subject_token_pos,
                           std::span<const std::uint8_t> mask) {
  const int nv = rec.video_tokens();
  const int hw = rec.height * rec.width;
  if (nv == 0 || rec.entries.empty()) throw Error("attention record is empty");
  if (static_cast<int>(mask.size()) != nv)
    throw DimensionError("mask has " + std::to_string(mask.size() / std::max(hw, 1)) + " frames, attention has " +
                         std::to_string(rec.frames));
  for (std::uint8_t m : mask)
    if (m > 1) throw RangeError("attention-score masks must be binary");
  std::vector<int> steps;
  for (const auto& [key, entry] : rec.entries)
    if (key.first == 0) steps.push_back(key.second);
  if (steps.empty()) throw Error("attention record lacks layer 0");
  for (int l = 0; l < layers_; ++l) {
    double sample_inside = 0.0, sample_terms = 0.0;
    for (int s : steps) {
      const auto t2v = mmdit::extract_frame_attention(rec, l, s, subject_token_pos, mmdit::Direction::t2v);
      const auto v2t = mmdit::extract_frame_attention(rec, l, s, subject_token_pos, mmdit::Direction::v2t);
      for (int f = 0; f < rec.frames; ++f) {
        double total = 0.0, in = 0.0;
        for (int i = f * hw; i < (f + 1) * hw; ++i) {
          const double a = 0.5 * (t2v[i] + v2t[i]);
          total += a;
          if (mask[i]) in += a;
        }
        if (!(total > 0.0)) throw NumericError("frame attention has no mass", s);
        sample_inside += in / total;
        sample_terms += 1.0;
      }
    }
    inside_[l] += sample_inside;
    terms_[l] += sample_terms;
    per_sample_[l].push_back(sample_inside / sample_terms);
  }
  ++samples_;
}

std::vector<double> ScoreAccumulator::scores() const {
  if (samples_ == 0) throw Error("no attention records were added");
  std::vector<double> s(layers_);
  for (int l = 0; l < layers_; ++l) s[l] = inside_[l] / terms_[l];
  return s;
}

std::vector<double> ScoreAccumulator::dispersion() const {
  std::vector<double> d(layers_, 0.0);
  for (int l = 0; l < layers_; ++l) {
    const auto& v = per_sample_[l];
    if (v.size() < 2) continue;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - mean) * (x - mean);
    d[l] = std::sqrt(sq / static_cast<double>(v.size()));
  }
  return d;
}

std::vector<double> attention_score(std::span<const mmdit::AttentionRecord> records,
                                    std::span<const int> subject_token_pos,
                                    std::span<const std::vector<std::uint8_t>> masks) {
  if (records.empty()) throw Error("attention_score: empty record set");
  if (subject_token_pos.size() != records.size() || masks.size() != records.size())
    throw DimensionError("attention_score: records, token positions and masks differ in count");
  int layers = 0;
  for (const auto& [key, entry] : records[0].entries) layers = std::max(layers, key.first + 1);
  ScoreAccumulator acc(layers);
  for (std::size_t i = 0; i < records.size(); ++i) acc.add(records[i], subject_token_pos[i], masks[i]);
  return acc.scores();
}

Selection select_motion_layers(std::span<const double> scores, SelectionRule rule, int k, int min_group) {
  const int L = static_cast<int>(scores.size());
  if (L == 0) throw Error("select_motion_layers: no scores");
  if (k < 1 || k > L) throw RangeError("k = " + std::to_string(k) + " out of range [1, " + std::to_string(L) + "]");
  const auto order = descending(scores);
  auto top = [&](int n) {
    std::vector<int> s(order.begin(), order.begin() + n);
    std::sort(s.begin(), s.end());
    return s;
  };
  if (rule == SelectionRule::fixed_k) return {top(k), false};

  min_group = std::max(1, min_group);
  int best_cut = -1;
  double best_gap = 0.0;
  for (int cut = min_group; cut <= L - min_group; ++cut) {
    const double gap = scores[order[cut - 1]] - scores[order[cut]];
    if (gap > best_gap) {
      best_gap = gap;
      best_cut = cut;
    }
  }
  if (best_cut < 0) return {top(k), true};
  return {top(best_cut), false};
}

std::vector<int> non_motion_pool(const LayerRanking& ranking, int needed) {
  const int L = static_cast<int>(ranking.scores.size());
  const int n = std::min(L, std::max(needed, L - static_cast<int>(ranking.selected.size())));
  const auto order = ranking.order();
  std::vector<int> pool(order.end() - n, order.end());
  std::sort(pool.begin(), pool.end());
  return pool;
}

namespace {

std::vector<int> draw(std::vector<int> pool, int n, Rng& rng) {
  for (int i = 0; i < n; ++i) {
    const int j = rng.uniform_int(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

json score_json(const metrics::SequenceScore& s) { return {{"J", s.j}, {"F", s.f}, {"JF", s.jf}}; }

}  // namespace

json SkipReport::to_json() const {
  json per = json::array();
  for (const auto& t : samples)
    per.push_back({{"id", t.id},
                   {"motion_skipped", t.motion_skipped},
                   {"non_motion_skipped", t.non_motion_skipped},
                   {"skip_motion", score_json(t.motion)},
                   {"skip_non_motion", score_json(t.non_motion)}});
  return {{"samples", per},
          {"mean", {{"skip_motion", score_json(motion_mean)}, {"skip_non_motion", score_json(non_motion_mean)}}},
          {"jf_margin", non_motion_mean.jf - motion_mean.jf}};
}

std::string SkipReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(26) << "setting" << std::right << std::setw(8) << "J" << std::setw(8) << "F"
     << std::setw(8) << "J&F" << "\n";
  auto row = [&](const char* name, const metrics::SequenceScore& s) {
    os << std::left << std::setw(26) << name << std::right << std::fixed << std::setprecision(1) << std::setw(8)
       << 100.0 * s.j << std::setw(8) << 100.0 * s.f << std::setw(8) << 100.0 * s.jf << "\n";
  };
  row("Skip Motion Layers", motion_mean);
  row("Skip Non-Motion Layers", non_motion_mean);
  os << samples.size() << " samples\n";
  return os.str();
}

SkipReport skip_ablation(Pipeline& p, const std::vector<world::Sample>& eval, const LayerRanking& ranking,
                         const SkipOptions& opt, const TripletSink& sink) {
  if (eval.empty()) throw Error("skip_ablation: empty evaluation set");
  if (opt.n_skip < 1) throw RangeError("skip_ablation: n_skip must be >= 1");
  const std::vector<int> motion_pool = ranking.selected;
  const std::vector<int> other_pool = non_motion_pool(ranking, opt.n_skip);
  if (static_cast<int>(motion_pool.size()) < opt.n_skip || static_cast<int>(other_pool.size()) < opt.n_skip)
    throw RangeError("skip_ablation: fewer than " + std::to_string(opt.n_skip) + " layers in a skip pool");

  SkipReport report;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto& s = eval[i];
    Rng rng(Rng::derive(opt.seed, 1000 + i));
    SkipTriplet t;
    t.id = s.dir;
    t.motion_skipped = draw(motion_pool, opt.n_skip, rng);
    t.non_motion_skipped = draw(other_pool, opt.n_skip, rng);

    GenerateOptions go;
    go.steps = opt.steps;
    go.noise_seed = Rng::derive(opt.seed, i);
    go.use_mask = opt.use_mask;
    const MaskSequence* mask = opt.use_mask ? &s.mask : nullptr;
    const VideoTensor full = p.generate_video(s.video, s.caption, mask, go);
    go.skip_layers = {t.motion_skipped.begin(), t.motion_skipped.end()};
    const VideoTensor skip_m = p.generate_video(s.video, s.caption, mask, go);
    go.skip_layers = {t.non_motion_skipped.begin(), t.non_motion_skipped.end()};
    const VideoTensor skip_n = p.generate_video(s.video, s.caption, mask, go);

    const auto ref = metrics::extract_subject_masks(full, s.subject_color, opt.color_threshold);
    t.motion = metrics::sequence_jf(metrics::extract_subject_masks(skip_m, s.subject_color, opt.color_threshold), ref,
                                    opt.tolerance);
    t.non_motion = metrics::sequence_jf(
        metrics::extract_subject_masks(skip_n, s.subject_color, opt.color_threshold), ref, opt.tolerance);
    if (sink) sink(i, full, skip_m, skip_n);
    report.samples.push_back(std::move(t));
  }
  const double n = static_cast<double>(report.samples.size());
  for (const auto& t : report.samples) {
    report.motion_mean.j += t.motion.j / n;
    report.motion_mean.f += t.motion.f / n;
    report.motion_mean.jf += t.motion.jf / n;
    report.non_motion_mean.j += t.non_motion.j / n;
    report.non_motion_mean.f += t.non_motion.f / n;
    report.non_motion_mean.jf += t.non_motion.jf / n;
  }
  return report;
}

LayerRanking rank_layers(Pipeline& p, const std::vector<world::Sample>& eval, const RankOptions& opt,
                         const std::function<void(std::size_t)>& progress) {
  if (eval.empty()) throw Error("rank_layers: empty evaluation set");
  ScoreAccumulator acc(p.model.config().depth);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto& s = eval[i];
    mmdit::AttentionRecord rec;
    GenerateOptions go;
    go.steps = opt.steps;
    go.noise_seed = Rng::derive(opt.seed, i);
    go.use_mask = opt.use_mask;
    go.record = &rec;
    const VideoTensor video = p.generate_video(s.video, s.caption, opt.use_mask ? &s.mask : nullptr, go);
    MaskSequence mask = s.mask;
    if (opt.mask_source == MaskSource::generated) {
      MaskSequence extracted = metrics::extract_subject_masks(video, s.subject_color, opt.color_threshold);
      if (std::any_of(extracted.data.begin(), extracted.data.end(), [](std::uint8_t v) { return v != 0; }))
        mask = std::move(extracted);
    }
    const codec::LatentMask lm = p.codec.latentize_mask(mask);
    acc.add(rec, s.caption.subject_token_pos, lm.raw);
    if (progress) progress(i);
  }
  LayerRanking r;
  r.scores = acc.scores();
  r.dispersion = acc.dispersion();
  r.samples = acc.samples();
  r.rule = opt.rule;
  const Selection sel = select_motion_layers(r.scores, opt.rule, opt.k, opt.min_group);
  r.selected = sel.layers;
  r.tie_fallback = sel.tie_fallback;
  return r;
}

}  // namespace comogen::motion
