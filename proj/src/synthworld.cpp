#include "comogen/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "comogen/error.hpp"
#include "comogen/rng.hpp"

namespace comogen::world {

namespace fs = std::filesystem;
using nlohmann::json;

const std::array<Rgb, kPaletteSize>& palette() {
  static const std::array<Rgb, kPaletteSize> colors = {{
      {220, 40, 40},    // red
      {40, 200, 40},    // green
      {40, 80, 230},    // blue
      {230, 220, 40},   // yellow
      {210, 40, 210},   // magenta
      {40, 210, 220},   // cyan
  }};
  return colors;
}

Rgb background_color() { return {40, 40, 40}; }

const char* color_name(int color_id) {
  static const char* names[kPaletteSize] = {"red", "green", "blue", "yellow", "magenta", "cyan"};
  if (color_id < 0 || color_id >= kPaletteSize) throw VocabularyError("unknown color id " + std::to_string(color_id));
  return names[color_id];
}

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::disc:
      return "disc";
    case Shape::square:
      return "square";
  }
  throw VocabularyError("unknown shape id " + std::to_string(static_cast<int>(s)));
}

Vec2 SceneTrace::momentum(int f) const {
  Vec2 p;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    p.x += objects[i].mass * states[f][i].velocity.x;
    p.y += objects[i].mass * states[f][i].velocity.y;
  }
  return p;
}

double SceneTrace::kinetic_energy(int f) const {
  double e = 0.0;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& v = states[f][i].velocity;
    e += 0.5 * objects[i].mass * (v.x * v.x + v.y * v.y);
  }
  return e;
}

namespace {

struct Body {
  ObjectSpec spec;
  BodyState state;
};

void total_momentum(const std::vector<Body>& bodies, double out[2]) {
  out[0] = out[1] = 0.0;
  for (const auto& b : bodies) {
    out[0] += b.spec.mass * b.state.velocity.x;
    out[1] += b.spec.mass * b.state.velocity.y;
  }
}

double total_energy(const std::vector<Body>& bodies) {
  double e = 0.0;
  for (const auto& b : bodies) {
    const auto& v = b.state.velocity;
    e += 0.5 * b.spec.mass * (v.x * v.x + v.y * v.y);
  }
  return e;
}

// Earliest time in (0, limit] at which discs a and b touch while approaching.
std::optional<double> pair_contact_time(const Body& a, const Body& b, double limit) {
  const double px = b.state.position.x - a.state.position.x;
  const double py = b.state.position.y - a.state.position.y;
  const double vx = b.state.velocity.x - a.state.velocity.x;
  const double vy = b.state.velocity.y - a.state.velocity.y;
  const double approach = px * vx + py * vy;
  if (approach >= 0.0) return std::nullopt;
  const double r = a.spec.radius + b.spec.radius;
  const double qa = vx * vx + vy * vy;
  const double qc = px * px + py * py - r * r;
  if (qc <= 0.0) return 0.0;  // touching and approaching
  const double disc = approach * approach - qa * qc;
  if (disc < 0.0) return std::nullopt;
  const double t = (-approach - std::sqrt(disc)) / qa;
  if (t < 0.0 || t > limit) return std::nullopt;
  return t;
}

// Earliest wall contact for one body: returns (time, axis).
std::optional<std::pair<double, int>> wall_contact_time(const Body& b, double width, double height, double limit) {
  std::optional<std::pair<double, int>> best;
  const double r = b.spec.radius;
  const double bounds[2][2] = {{r, width - r}, {r, height - r}};
  const double pos[2] = {b.state.position.x, b.state.position.y};
  const double vel[2] = {b.state.velocity.x, b.state.velocity.y};
  for (int axis = 0; axis < 2; ++axis) {
    double t = std::numeric_limits<double>::infinity();
    if (vel[axis] > 0.0) t = (bounds[axis][1] - pos[axis]) / vel[axis];
    if (vel[axis] < 0.0) t = (bounds[axis][0] - pos[axis]) / vel[axis];
    t = std::max(t, 0.0);
    if (t <= limit && (!best || t < best->first)) best = std::make_pair(t, axis);
  }
  return best;
}

void advance(std::vector<Body>& bodies, double dt) {
  for (auto& b : bodies) {
    b.state.position.x += b.state.velocity.x * dt;
    b.state.position.y += b.state.velocity.y * dt;
  }
}

void clamp_inside(Body& b, double width, double height) {
  const double r = b.spec.radius;
  b.state.position.x = std::clamp(b.state.position.x, r, width - r);
  b.state.position.y = std::clamp(b.state.position.y, r, height - r);
}

}  // namespace

SceneTrace simulate_scene(std::uint64_t seed, int n_objects, int frames, int width, int height,
                          const WorldConfig& cfg) {
  if (n_objects < 1) throw RangeError("simulate_scene: n_objects must be >= 1");
  if (n_objects > kPaletteSize) throw RangeError("simulate_scene: more objects than palette colors");
  if (frames < 8) throw RangeError("simulate_scene: frame count must be >= 8");
  if (width <= 0 || height <= 0) throw RangeError("simulate_scene: arena must be non-empty");

  Rng rng(seed);
  std::vector<int> colors(kPaletteSize);
  for (int i = 0; i < kPaletteSize; ++i) colors[i] = i;
  for (int i = kPaletteSize - 1; i > 0; --i) std::swap(colors[i], colors[rng.uniform_int(0, i)]);

  std::vector<Body> bodies(n_objects);
  for (int i = 0; i < n_objects; ++i) {
    auto& s = bodies[i].spec;
    s.shape = rng.uniform() < 0.5 ? Shape::disc : Shape::square;
    s.color_id = colors[i];
    s.radius = rng.uniform(cfg.min_radius, cfg.max_radius);
    s.mass = s.radius * s.radius;
  }

  // Reject-and-retry placement of all objects, bounded.
  bool placed = false;
  for (int attempt = 0; attempt < cfg.placement_attempts && !placed; ++attempt) {
    placed = true;
    for (int i = 0; i < n_objects && placed; ++i) {
      const double r = bodies[i].spec.radius;
      if (2.0 * r > width || 2.0 * r > height) {
        placed = false;
        break;
      }
      bodies[i].state.position = {rng.uniform(r, width - r), rng.uniform(r, height - r)};
      for (int j = 0; j < i; ++j) {
        const double dx = bodies[i].state.position.x - bodies[j].state.position.x;
        const double dy = bodies[i].state.position.y - bodies[j].state.position.y;
        const double min_gap = bodies[i].spec.radius + bodies[j].spec.radius + 1.0;
        if (dx * dx + dy * dy < min_gap * min_gap) {
          placed = false;
          break;
        }
      }
    }
  }
  if (!placed) {
    throw UnsatisfiableScene("unsatisfiable scene: no non-overlapping placement of " + std::to_string(n_objects) +
                             " objects in " + std::to_string(width) + "x" + std::to_string(height) + " after " +
                             std::to_string(cfg.placement_attempts) + " attempts");
  }

  const int subject = rng.uniform_int(0, n_objects - 1);
  for (int i = 0; i < n_objects; ++i) {
    double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double speed = rng.uniform(0.0, cfg.other_max_speed);
    if (i == subject) {
      speed = rng.uniform(cfg.subject_min_speed, cfg.subject_max_speed);
      if (n_objects > 1) {
        int target = rng.uniform_int(0, n_objects - 2);
        if (target >= subject) ++target;
        const double dx = bodies[target].state.position.x - bodies[i].state.position.x;
        const double dy = bodies[target].state.position.y - bodies[i].state.position.y;
        angle = std::atan2(dy, dx) + rng.uniform(-cfg.aim_jitter, cfg.aim_jitter);
      }
    }
    bodies[i].state.velocity = {speed * std::cos(angle), speed * std::sin(angle)};
  }

  std::vector<ObjectSpec> specs;
  std::vector<BodyState> initial;
  for (const auto& b : bodies) {
    specs.push_back(b.spec);
    initial.push_back(b.state);
  }
  SceneTrace trace = simulate_from(specs, initial, frames, width, height, subject);
  trace.seed = seed;
  return trace;
}

SceneTrace simulate_from(const std::vector<ObjectSpec>& objects, const std::vector<BodyState>& initial, int frames,
                         int width, int height, int subject) {
  if (objects.size() != initial.size() || objects.empty())
    throw DimensionError("simulate_from: need one initial state per object");
  if (frames < 1) throw RangeError("simulate_from: frame count must be >= 1");
  if (subject < 0 || subject >= static_cast<int>(objects.size())) throw RangeError("simulate_from: bad subject index");
  const int n_objects = static_cast<int>(objects.size());
  std::vector<Body> bodies(objects.size());
  for (int i = 0; i < n_objects; ++i) bodies[i] = {objects[i], initial[i]};

  SceneTrace trace;
  trace.frames = frames;
  trace.width = width;
  trace.height = height;
  trace.subject_index = subject;
  trace.objects = objects;

  auto snapshot = [&] {
    std::vector<BodyState> s;
    s.reserve(bodies.size());
    for (const auto& b : bodies) s.push_back(b.state);
    trace.states.push_back(std::move(s));
  };
  snapshot();

  constexpr int kMaxEventsPerFrame = 256;
  for (int f = 0; f + 1 < frames; ++f) {
    double remaining = 1.0;
    int events = 0;
    while (true) {
      double best_t = std::numeric_limits<double>::infinity();
      int best_a = -1, best_b = -1, best_axis = -1;
      for (int i = 0; i < n_objects; ++i) {
        if (auto w = wall_contact_time(bodies[i], width, height, remaining); w && w->first < best_t) {
          best_t = w->first;
          best_a = i;
          best_b = -1;
          best_axis = w->second;
        }
        for (int j = i + 1; j < n_objects; ++j) {
          if (auto t = pair_contact_time(bodies[i], bodies[j], remaining); t && *t < best_t) {
            best_t = *t;
            best_a = i;
            best_b = j;
          }
        }
      }
      if (best_a < 0 || events >= kMaxEventsPerFrame) {
        if (remaining == 1.0) {
          for (auto& b : bodies) {
            b.state.position.x += b.state.velocity.x;
            b.state.position.y += b.state.velocity.y;
          }
        } else {
          advance(bodies, remaining);
        }
        break;
      }
      advance(bodies, best_t);
      remaining -= best_t;
      ++events;

      CollisionEvent ev;
      ev.frame = f;
      ev.time = f + (1.0 - remaining);
      ev.a = best_a;
      ev.other = best_b;
      total_momentum(bodies, ev.momentum_before);
      ev.energy_before = total_energy(bodies);
      if (best_b < 0) {
        auto& b = bodies[best_a];
        clamp_inside(b, width, height);
        double& v = best_axis == 0 ? b.state.velocity.x : b.state.velocity.y;
        const double impulse = -2.0 * b.spec.mass * v;
        v = -v;
        ev.impulse_a = best_axis == 0 ? Vec2{impulse, 0.0} : Vec2{0.0, impulse};
      } else {
        auto& a = bodies[best_a];
        auto& b = bodies[best_b];
        double nx = b.state.position.x - a.state.position.x;
        double ny = b.state.position.y - a.state.position.y;
        const double len = std::hypot(nx, ny);
        nx /= len;
        ny /= len;
        const double rel = (a.state.velocity.x - b.state.velocity.x) * nx + (a.state.velocity.y - b.state.velocity.y) * ny;
        const double j = 2.0 * a.spec.mass * b.spec.mass / (a.spec.mass + b.spec.mass) * rel;
        a.state.velocity.x -= j / a.spec.mass * nx;
        a.state.velocity.y -= j / a.spec.mass * ny;
        b.state.velocity.x += j / b.spec.mass * nx;
        b.state.velocity.y += j / b.spec.mass * ny;
        ev.impulse_a = {-j * nx, -j * ny};
        ev.impulse_b = {j * nx, j * ny};
      }
      total_momentum(bodies, ev.momentum_after);
      ev.energy_after = total_energy(bodies);
      trace.events.push_back(ev);
    }
    for (auto& b : bodies) clamp_inside(b, width, height);
    snapshot();
  }
  return trace;
}

Rendered render(const SceneTrace& trace) {
  Rendered out{VideoTensor(trace.frames, trace.height, trace.width), MaskSequence(trace.frames, trace.height, trace.width)};
  const Rgb bg = background_color();
  const int n = static_cast<int>(trace.objects.size());
  std::vector<int> order;
  for (int i = 0; i < n; ++i)
    if (i != trace.subject_index) order.push_back(i);
  order.push_back(trace.subject_index);

  for (int f = 0; f < trace.frames; ++f) {
    for (int y = 0; y < trace.height; ++y)
      for (int x = 0; x < trace.width; ++x) std::copy(bg.begin(), bg.end(), out.video.pixel(f, y, x));
    for (int i : order) {
      const auto& spec = trace.objects[i];
      const auto& pos = trace.states[f][i].position;
      const Rgb color = palette()[spec.color_id];
      const double r = spec.radius;
      const double half = r / std::numbers::sqrt2;
      const int y0 = std::max(0, static_cast<int>(std::floor(pos.y - r)));
      const int y1 = std::min(trace.height - 1, static_cast<int>(std::ceil(pos.y + r)));
      const int x0 = std::max(0, static_cast<int>(std::floor(pos.x - r)));
      const int x1 = std::min(trace.width - 1, static_cast<int>(std::ceil(pos.x + r)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double dx = x + 0.5 - pos.x;
          const double dy = y + 0.5 - pos.y;
          const bool inside = spec.shape == Shape::disc ? dx * dx + dy * dy <= r * r
                                                        : std::abs(dx) <= half && std::abs(dy) <= half;
          if (!inside) continue;
          std::copy(color.begin(), color.end(), out.video.pixel(f, y, x));
          out.mask.at(f, y, x) = i == trace.subject_index ? 1 : 0;
        }
      }
    }
  }
  return out;
}

namespace vocab {

int color_token(int color_id) {
  if (color_id < 0 || color_id >= kPaletteSize) throw VocabularyError("unknown color id " + std::to_string(color_id));
  return kFirstColor + color_id;
}

int shape_token(Shape s) {
  const int id = static_cast<int>(s);
  if (id < 0 || id > 1) throw VocabularyError("unknown shape id " + std::to_string(id));
  return kFirstShape + id;
}

std::string word(int token) {
  if (token == kPad) return "<pad>";
  if (token >= kFirstColor && token < kFirstShape) return color_name(token - kFirstColor);
  if (token >= kFirstShape && token < kSize) return shape_name(static_cast<Shape>(token - kFirstShape));
  throw VocabularyError("token id out of vocabulary: " + std::to_string(token));
}

int token(const std::string& w) {
  for (int t = 0; t < kSize; ++t)
    if (word(t) == w) return t;
  throw VocabularyError("word not in vocabulary: '" + w + "'");
}

}  // namespace vocab

Caption make_caption(const SceneTrace& trace, int text_length) {
  if (text_length < 2) throw RangeError("caption length must be >= 2");
  const auto& subject = trace.objects.at(trace.subject_index);
  Caption c;
  c.token_ids.assign(text_length, vocab::kPad);
  c.token_ids[0] = vocab::color_token(subject.color_id);
  c.token_ids[1] = vocab::shape_token(subject.shape);
  c.subject_token_pos = 0;
  return c;
}

std::string detokenize(const Caption& c) {
  std::string out;
  for (int t : c.token_ids) {
    if (t == vocab::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab::word(t);
  }
  return out;
}

Caption tokenize(const std::string& text, int text_length) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  if (words.size() > static_cast<std::size_t>(text_length)) throw VocabularyError("caption longer than text length");
  Caption c;
  c.token_ids.assign(text_length, vocab::kPad);
  for (std::size_t i = 0; i < words.size(); ++i) c.token_ids[i] = vocab::token(words[i]);
  c.subject_token_pos = 0;
  if (c.token_ids[0] == vocab::kPad) throw VocabularyError("caption has no subject token");
  return c;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, const std::string& split, int index) {
  const std::uint64_t stream = split == "train" ? 0 : split == "val" ? 1 : 2;
  return Rng::derive(Rng::derive(dataset_seed, stream), static_cast<std::uint64_t>(index));
}

namespace {

void write_bytes(const fs::path& file, const std::uint8_t* data, std::size_t size) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + file.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw FormatError("write failed: " + file.string());
}

std::vector<std::uint8_t> read_bytes(const fs::path& file, std::size_t expected) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + file.string());
  std::vector<std::uint8_t> buf(expected);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
  if (in.gcount() != static_cast<std::streamsize>(expected) || in.peek() != std::char_traits<char>::eof())
    throw FormatError("unexpected size for " + file.string() + " (want " + std::to_string(expected) + " bytes)");
  return buf;
}

json meta_json(const SceneTrace& trace, const Caption& caption) {
  json objects = json::array();
  for (const auto& o : trace.objects) {
    objects.push_back({{"shape", shape_name(o.shape)}, {"color_id", o.color_id}, {"radius", o.radius}, {"mass", o.mass}});
  }
  return {{"seed", trace.seed},
          {"T", trace.frames},
          {"H", trace.height},
          {"W", trace.width},
          {"objects", objects},
          {"subject_index", trace.subject_index},
          {"caption", caption.token_ids},
          {"subject_token_pos", caption.subject_token_pos}};
}

}  // namespace

void write_sample_files(const fs::path& dir, const VideoTensor& video, const MaskSequence& mask,
                        const std::string& meta) {
  fs::create_directories(dir);
  fs::remove(dir / "done.marker");
  {
    std::ofstream out(dir / "meta.json", std::ios::binary | std::ios::trunc);
    out << meta << '\n';
    if (!out) throw FormatError("write failed: " + (dir / "meta.json").string());
  }
  write_bytes(dir / "video.rgb24", video.data.data(), video.data.size());
  std::vector<std::uint8_t> gray(mask.data.size());
  std::transform(mask.data.begin(), mask.data.end(), gray.begin(), [](std::uint8_t v) -> std::uint8_t { return v ? 255 : 0; });
  write_bytes(dir / "mask.gray8", gray.data(), gray.size());
  std::ofstream(dir / "done.marker", std::ios::binary | std::ios::trunc);
}

VideoTensor read_video(const fs::path& file, int t, int h, int w) {
  VideoTensor v(t, h, w);
  v.data = read_bytes(file, v.data.size());
  return v;
}

MaskSequence read_mask(const fs::path& file, int t, int h, int w) {
  MaskSequence m(t, h, w);
  const auto raw = read_bytes(file, m.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] != 0 && raw[i] != 255) throw FormatError("mask byte not 0 or 255 in " + file.string());
    m.data[i] = raw[i] ? 1 : 0;
  }
  return m;
}

DatasetSummary generate_dataset(const DatasetConfig& cfg, const fs::path& out) {
  if (cfg.world.frames % 4 != 0) throw DimensionError("dataset frame count must be a multiple of 4");
  fs::create_directories(out);
  fs::remove(out / "manifest.json");
  DatasetSummary summary;
  json samples = json::array();
  for (const auto& [split, count] : {std::pair<std::string, int>{"train", cfg.train_samples}, {"val", cfg.val_samples}}) {
    for (int i = 0; i < count; ++i) {
      const std::uint64_t seed = sample_seed(cfg.seed, split, i);
      Rng pick(Rng::derive(seed, 99));
      const int n = pick.uniform_int(cfg.world.min_objects, cfg.world.max_objects);
      const SceneTrace trace = simulate_scene(seed, n, cfg.world.frames, cfg.world.width, cfg.world.height, cfg.world);
      const Rendered r = render(trace);
      const Caption caption = make_caption(trace, cfg.world.text_length);
      std::ostringstream name;
      name << split << '/' << std::setw(5) << std::setfill('0') << i;
      write_sample_files(out / name.str(), r.video, r.mask, meta_json(trace, caption).dump(2));
      summary.samples.push_back({name.str(), split, seed});
      summary.bytes += r.video.data.size() + r.mask.data.size();
      samples.push_back({{"dir", name.str()}, {"split", split}, {"seed", seed}});
    }
  }
  json manifest = {{"format", "comogen-dataset"},
                   {"version", 1},
                   {"seed", cfg.seed},
                   {"count", summary.samples.size()},
                   {"samples", samples}};
  std::ofstream mout(out / "manifest.json", std::ios::binary | std::ios::trunc);
  mout << manifest.dump(2) << '\n';
  if (!mout) throw FormatError("cannot write manifest in " + out.string());
  return summary;
}

Sample load_sample(const fs::path& dir) {
  if (!fs::exists(dir / "done.marker")) throw FormatError("incomplete sample (no done.marker): " + dir.string());
  std::ifstream in(dir / "meta.json");
  if (!in) throw FormatError("missing meta.json in " + dir.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("bad meta.json in " + dir.string() + ": " + e.what());
  }
  Sample s;
  const int t = meta.at("T"), h = meta.at("H"), w = meta.at("W");
  s.seed = meta.at("seed");
  s.subject_index = meta.at("subject_index");
  s.caption.token_ids = meta.at("caption").get<std::vector<int>>();
  s.caption.subject_token_pos = meta.at("subject_token_pos");
  for (const auto& o : meta.at("objects")) {
    ObjectSpec spec;
    spec.shape = o.at("shape") == "disc" ? Shape::disc : Shape::square;
    spec.color_id = o.at("color_id");
    spec.radius = o.at("radius");
    spec.mass = o.at("mass");
    s.objects.push_back(spec);
  }
  s.subject_color = palette().at(s.objects.at(s.subject_index).color_id);
  s.video = read_video(dir / "video.rgb24", t, h, w);
  s.mask = read_mask(dir / "mask.gray8", t, h, w);
  return s;
}

std::vector<Sample> load_dataset(const fs::path& root, const std::optional<std::string>& split) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw FormatError("dataset has no manifest.json: " + root.string());
  const json manifest = json::parse(in);
  std::vector<Sample> out;
  for (const auto& entry : manifest.at("samples")) {
    const std::string sp = entry.at("split");
    if (split && sp != *split) continue;
    Sample s = load_sample(root / entry.at("dir").get<std::string>());
    s.split = sp;
    s.dir = entry.at("dir");
    out.push_back(std::move(s));
  }
  if (manifest.at("count").get<std::size_t>() != manifest.at("samples").size())
    throw FormatError("manifest count disagrees with sample list in " + root.string());
  return out;
}

}  // namespace comogen::world
