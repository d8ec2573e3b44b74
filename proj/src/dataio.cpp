#include "vins/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "vins/error.hpp"

namespace vins {

namespace fs = std::filesystem;

// --- basic types ------------------------------------------------------------

Frame Frame::filled(int height, int width, double value, int index) {
  return Frame(Tensor({3, height, width}, value), index);
}

void Frame::validate() const {
  if (pixels.ndim() != 3 || pixels.dim(0) != 3) {
    throw ValidationError("frame must be (3,H,W), got " + shape_string(pixels.shape()));
  }
  if (height() < 8 || width() < 8) throw ValidationError("frame smaller than 8x8");
  for (double v : pixels.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("frame pixel outside [0,1]");
  }
  if (index < 0) throw ValidationError("negative frame index");
}

void FrameSequence::validate() const {
  if (!(fps > 0.0)) throw ValidationError("fps must be positive");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].validate();
    if (frames[i].height() != height() || frames[i].width() != width()) {
      throw ValidationError("frames of a sequence must share H and W");
    }
    if (i > 0 && frames[i].index <= frames[i - 1].index) {
      throw ValidationError("frame indices must be strictly increasing");
    }
  }
}

void PatchSpec::validate() const {
  if (height < 16 || width < 16) throw ValidationError("patch sides must be >= 16");
  if (height % 2 || width % 2) throw ValidationError("patch sides must be even");
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

BinaryMask LabelMap::mask_of(int object_id) const {
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < labels.size(); ++i) m.values[i] = labels[i] == object_id ? 1 : 0;
  return m;
}

const Track* VideoData::find_track(int object_id) const {
  for (const auto& t : tracks) {
    if (t.object_id == object_id) return &t;
  }
  return nullptr;
}

double VideoData::median_object_height() const {
  std::vector<double> hs;
  for (const auto& t : tracks)
    for (const auto& [f, b] : t.boxes) hs.push_back(b.h);
  if (hs.empty()) throw ValidationError("video '" + name + "' has no annotated boxes");
  const std::size_t mid = hs.size() / 2;
  std::nth_element(hs.begin(), hs.begin() + static_cast<std::ptrdiff_t>(mid), hs.end());
  double m = hs[mid];
  if (hs.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(hs.begin(), hs.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

// --- annotations ------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& field, int line) {
  const std::string t = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ParseError("invalid number '" + t + "'", line);
  }
  return v;
}

int parse_int(const std::string& field, int line) {
  const double v = parse_double(field, line);
  if (v != std::floor(v)) throw ParseError("expected an integer, got '" + trim(field) + "'", line);
  return static_cast<int>(v);
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

std::vector<Track> parse_annotations(std::istream& in) {
  std::map<int, Track> by_id;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(t);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() < 6) throw ParseError("expected frame,id,x,y,w,h", line_no);
    const int frame = parse_int(fields[0], line_no);
    const int id = parse_int(fields[1], line_no);
    BoundingBox b{parse_double(fields[2], line_no), parse_double(fields[3], line_no),
                  parse_double(fields[4], line_no), parse_double(fields[5], line_no)};
    if (frame < 0) throw ValidationError("negative frame index at line " + std::to_string(line_no));
    if (!(b.w > 0.0) || !(b.h > 0.0)) {
      throw ValidationError("non-positive box extent at line " + std::to_string(line_no));
    }
    Track& tr = by_id[id];
    tr.object_id = id;
    if (!tr.boxes.emplace(frame, b).second) {
      throw ValidationError("duplicate box for id " + std::to_string(id) + " frame " +
                            std::to_string(frame) + " at line " + std::to_string(line_no));
    }
  }
  std::vector<Track> out;
  out.reserve(by_id.size());
  for (auto& [id, tr] : by_id) out.push_back(std::move(tr));
  return out;
}

std::vector<Track> load_annotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations '" + path.string() + "'");
  return parse_annotations(in);
}

void write_annotations(std::ostream& out, std::span<const Track> tracks) {
  // Frame-major order, as MOT files are usually laid out.
  std::vector<std::pair<int, const Track*>> rows;
  for (const auto& t : tracks)
    for (const auto& [frame, b] : t.boxes) rows.emplace_back(frame, &t);
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second->object_id < b.second->object_id;
  });
  for (const auto& [frame, t] : rows) {
    const BoundingBox& b = t->boxes.at(frame);
    out << frame << ',' << t->object_id << ',' << shortest(b.x) << ',' << shortest(b.y) << ','
        << shortest(b.w) << ',' << shortest(b.h) << '\n';
  }
}

void save_annotations(const fs::path& path, std::span<const Track> tracks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write annotations '" + path.string() + "'");
  write_annotations(out, tracks);
}

// --- resampling -------------------------------------------------------------

Tensor resample_bilinear(const Tensor& src, const BoundingBox& box, int out_h, int out_w) {
  if (src.ndim() != 3) throw ValidationError("resample_bilinear expects (C,H,W)");
  if (out_h < 1 || out_w < 1) throw ValidationError("resample target must be non-empty");
  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  const double sy = box.h / out_h;
  const double sx = box.w / out_w;
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (int j = 0; j < out_w; ++j) {
    const double s = box.x + (j + 0.5) * sx - 0.5;
    const double f = std::floor(s);
    fx[j] = s - f;
    x0[j] = std::clamp(static_cast<int>(f), 0, W - 1);
    x1[j] = std::clamp(static_cast<int>(f) + 1, 0, W - 1);
  }
  Tensor out({C, out_h, out_w});
  for (int i = 0; i < out_h; ++i) {
    const double s = box.y + (i + 0.5) * sy - 0.5;
    const double f = std::floor(s);
    const double fy = s - f;
    const int y0 = std::clamp(static_cast<int>(f), 0, H - 1);
    const int y1 = std::clamp(static_cast<int>(f) + 1, 0, H - 1);
    for (int c = 0; c < C; ++c)
      for (int j = 0; j < out_w; ++j) {
        const double top = (1.0 - fx[j]) * src.at(c, y0, x0[j]) + fx[j] * src.at(c, y0, x1[j]);
        const double bot = (1.0 - fx[j]) * src.at(c, y1, x0[j]) + fx[j] * src.at(c, y1, x1[j]);
        out.at(c, i, j) = (1.0 - fy) * top + fy * bot;
      }
  }
  return out;
}

Frame crop_patch(const Frame& frame, const BoundingBox& box, const PatchSpec& spec) {
  spec.validate();
  if (!(box.w > 0.0 && box.h > 0.0)) throw ValidationError("crop box must have positive extent");
  if (!box.intersects_frame(frame.height(), frame.width())) {
    throw ValidationError("crop box lies entirely outside the frame");
  }
  Tensor px = resample_bilinear(frame.pixels, box, spec.height, spec.width);
  for (double& v : px.values()) v = std::clamp(v, 0.0, 1.0);
  return Frame(std::move(px), frame.index);
}

BinaryMask crop_mask(const BinaryMask& mask, const BoundingBox& box, const PatchSpec& spec) {
  BinaryMask out(spec.height, spec.width);
  for (int i = 0; i < spec.height; ++i) {
    const int y = static_cast<int>(std::floor(box.y + (i + 0.5) * box.h / spec.height));
    if (y < 0 || y >= mask.height) continue;
    for (int j = 0; j < spec.width; ++j) {
      const int x = static_cast<int>(std::floor(box.x + (j + 0.5) * box.w / spec.width));
      if (x < 0 || x >= mask.width) continue;
      out.at(i, j) = mask.at(y, x);
    }
  }
  return out;
}

// --- placement --------------------------------------------------------------

BoundingBox sample_placement(const FrameSequence& scene, const BoundingBox& roi, double median_height,
                             const PatchSpec& spec, Rng& rng) {
  if (scene.empty()) throw ValidationError("sample_placement: empty scene");
  if (!(median_height > 0.0)) throw ValidationError("sample_placement: median height must be positive");
  if (!roi.inside_frame(scene.height(), scene.width()) || !(roi.w > 0.0 && roi.h > 0.0)) {
    throw ValidationError("sample_placement: roi must lie inside the scene");
  }
  const double min_h = 0.5 * median_height;
  const double min_w = min_h * spec.aspect();
  if (roi.h < min_h || roi.w < min_w) {
    throw ValidationError("sample_placement: roi smaller than the minimum placement box");
  }
  const double h = rng.uniform(0.5, 1.5) * median_height;
  const double w = h * spec.aspect();
  const double cx = rng.uniform(roi.x, roi.right());
  const double cy = rng.uniform(roi.y, roi.bottom());
  return BoundingBox::centered(cx, cy, w, h);
}

BoundingBox sample_placement(const FrameSequence& scene, const BoundingBox& roi, double median_height,
                             const PatchSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return sample_placement(scene, roi, median_height, spec, rng);
}

std::vector<BoundingBox> scale_trajectory(std::span<const BoundingBox> traj, double target_height,
                                          double anchor_cx, double anchor_cy) {
  if (traj.empty()) throw ValidationError("scale_trajectory: empty trajectory");
  if (!(target_height > 0.0)) throw ValidationError("scale_trajectory: target height must be positive");
  if (!(traj[0].h > 0.0)) throw ValidationError("scale_trajectory: first box has no height");
  const double s = target_height / traj[0].h;
  const double cx0 = traj[0].cx();
  const double cy0 = traj[0].cy();
  std::vector<BoundingBox> out;
  out.reserve(traj.size());
  for (const auto& b : traj) {
    out.push_back(BoundingBox::centered(anchor_cx + s * (b.cx() - cx0), anchor_cy + s * (b.cy() - cy0),
                                        s * b.w, s * b.h));
  }
  return out;
}

// --- sprites ----------------------------------------------------------------

void SpriteConfig::validate() const {
  if (n_videos < 1 || n_frames < 1) throw ValidationError("sprite config: counts must be positive");
  if (frame_height < 32 || frame_width < 32) throw ValidationError("sprite config: frames must be >= 32 px");
  if (n_objects < 0 || n_objects > 254) throw ValidationError("sprite config: n_objects out of range");
}

namespace {

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

// Reflects p into [lo, hi].
double fold(double p, double lo, double hi) {
  const double L = hi - lo;
  if (L <= 0.0) return 0.5 * (lo + hi);
  double q = std::fmod(p - lo, 2.0 * L);
  if (q < 0.0) q += 2.0 * L;
  return lo + (q > L ? 2.0 * L - q : q);
}

struct Grating {
  double fx, fy, vx, vy, phase, amp;
  double col[3];
};

struct Sprite {
  int id;
  double height, width;
  double cx0, cy0, vx, vy, ax, ay, wx, wy, px, py;
  double walk_rate, walk_phase;
  double head[3], body[3], body2[3], legs[3];
  double stripe;
};

void random_color(Rng& rng, double* c, double lo, double hi) {
  for (int k = 0; k < 3; ++k) c[k] = rng.uniform(lo, hi);
}

// Part colour at sprite-local coordinates (u across, v down, both in [0,1]),
// or nullptr outside the figure.
const double* sprite_color(const Sprite& s, double u, double v, double swing) {
  const double aspect = s.width / s.height;
  const double du = (u - 0.5) * aspect;
  const double dv = v - 0.11;
  if (du * du + dv * dv <= 0.11 * 0.11) return s.head;
  if (v >= 0.22 && v < 0.62 && std::abs(u - 0.5) <= 0.45) {
    if (v < 0.27 && std::abs(u - 0.5) > 0.36) return nullptr;
    const int band = static_cast<int>(std::floor((v - 0.22) / s.stripe));
    return band % 2 ? s.body2 : s.body;
  }
  if (v >= 0.62 && v <= 1.0) {
    const double t = (v - 0.62) / 0.38;
    const double left = 0.3 + swing * t;
    const double right = 0.7 - swing * t;
    if (std::abs(u - left) <= 0.11 || std::abs(u - right) <= 0.11) return s.legs;
  }
  return nullptr;
}

}  // namespace

Dataset generate_sprite_dataset(const SpriteConfig& config) {
  config.validate();
  const int H = config.frame_height;
  const int W = config.frame_width;
  Rng master(config.seed);
  Dataset ds;
  for (int v = 0; v < config.n_videos; ++v) {
    Rng rng = master.split();
    VideoData vd;
    char name[32];
    std::snprintf(name, sizeof name, "video_%04d", v);
    vd.name = name;
    vd.roi = {0.05 * W, 0.2 * H, 0.9 * W, 0.75 * H};

    double base[3];
    random_color(rng, base, 0.25, 0.7);
    std::vector<Grating> gratings(3);
    for (auto& g : gratings) {
      const double wavelength = rng.uniform(6.0, 28.0);
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      g.fx = std::cos(angle) / wavelength;
      g.fy = std::sin(angle) / wavelength;
      g.vx = rng.uniform(-0.6, 0.6);
      g.vy = rng.uniform(-0.3, 0.3);
      g.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      g.amp = rng.uniform(0.04, 0.12);
      random_color(rng, g.col, -1.0, 1.0);
    }
    const double ground_tint = rng.uniform(-0.15, 0.15);

    std::vector<Sprite> sprites(static_cast<std::size_t>(config.n_objects));
    for (int k = 0; k < config.n_objects; ++k) {
      Sprite& s = sprites[static_cast<std::size_t>(k)];
      s.id = k + 1;
      s.height = rng.uniform(0.28, 0.42) * H;
      s.width = 0.42 * s.height;
      s.cx0 = rng.uniform(vd.roi.x, vd.roi.right());
      s.cy0 = rng.uniform(vd.roi.y + 0.3 * vd.roi.h, vd.roi.bottom());
      const double speed = rng.uniform(0.3, 1.5);
      s.vx = rng.uniform(0.0, 1.0) < 0.5 ? -speed : speed;
      s.vy = rng.uniform(-0.3, 0.3);
      s.ax = rng.uniform(0.0, 3.0);
      s.ay = rng.uniform(0.0, 1.5);
      s.wx = 2.0 * std::numbers::pi / rng.uniform(10.0, 30.0);
      s.wy = 2.0 * std::numbers::pi / rng.uniform(10.0, 30.0);
      s.px = rng.uniform(0.0, 2.0 * std::numbers::pi);
      s.py = rng.uniform(0.0, 2.0 * std::numbers::pi);
      s.walk_rate = rng.uniform(0.25, 0.6);
      s.walk_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      random_color(rng, s.head, 0.55, 0.95);
      random_color(rng, s.body, 0.0, 1.0);
      random_color(rng, s.body2, 0.0, 1.0);
      random_color(rng, s.legs, 0.0, 0.6);
      s.stripe = rng.uniform(0.05, 0.12);
    }

    vd.tracks.resize(sprites.size());
    for (std::size_t k = 0; k < sprites.size(); ++k) vd.tracks[k].object_id = sprites[k].id;

    for (int t = 0; t < config.n_frames; ++t) {
      Tensor px({3, H, W});
      for (int y = 0; y < H; ++y) {
        const double ground = ground_tint * (static_cast<double>(y) / H - 0.5);
        for (int x = 0; x < W; ++x) {
          double c[3] = {base[0] + ground, base[1] + ground, base[2] + ground};
          for (const auto& g : gratings) {
            const double arg = 2.0 * std::numbers::pi * (g.fx * (x - g.vx * t) + g.fy * (y - g.vy * t)) + g.phase;
            const double s = g.amp * std::sin(arg);
            for (int k = 0; k < 3; ++k) c[k] += s * g.col[k];
          }
          for (int k = 0; k < 3; ++k) px.at(k, y, x) = quantize(c[k]);
        }
      }
      LabelMap lm{H, W, std::vector<std::uint8_t>(static_cast<std::size_t>(H) * W, 0)};
      for (const auto& s : sprites) {
        const double half_w = 0.5 * s.width, half_h = 0.5 * s.height;
        const double cx = fold(s.cx0 + s.vx * t + s.ax * std::sin(s.wx * t + s.px), half_w + 1.0, W - half_w - 1.0);
        const double cy = fold(s.cy0 + s.vy * t + s.ay * std::sin(s.wy * t + s.py), half_h + 1.0, H - half_h - 1.0);
        const double bx = cx - half_w, by = cy - half_h;
        const double swing = 0.15 * std::sin(s.walk_rate * t + s.walk_phase);
        const int x0 = std::max(0, static_cast<int>(std::floor(bx)));
        const int x1 = std::min(W - 1, static_cast<int>(std::ceil(bx + s.width)));
        const int y0 = std::max(0, static_cast<int>(std::floor(by)));
        const int y1 = std::min(H - 1, static_cast<int>(std::ceil(by + s.height)));
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const double u = (x + 0.5 - bx) / s.width;
            const double vv = (y + 0.5 - by) / s.height;
            if (u < 0.0 || u > 1.0 || vv < 0.0 || vv > 1.0) continue;
            const double* col = sprite_color(s, u, vv, swing);
            if (!col) continue;
            for (int k = 0; k < 3; ++k) px.at(k, y, x) = quantize(col[k]);
            lm.labels[static_cast<std::size_t>(y) * W + x] = static_cast<std::uint8_t>(s.id);
          }
      }
      // Boxes are the tight bounds of the visible (post-occlusion) pixels.
      for (std::size_t k = 0; k < sprites.size(); ++k) {
        int minx = W, miny = H, maxx = -1, maxy = -1;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            if (lm.at(y, x) == sprites[k].id) {
              minx = std::min(minx, x);
              maxx = std::max(maxx, x);
              miny = std::min(miny, y);
              maxy = std::max(maxy, y);
            }
        if (maxx >= 0) {
          vd.tracks[k].boxes[t] = {static_cast<double>(minx), static_cast<double>(miny),
                                   static_cast<double>(maxx - minx + 1), static_cast<double>(maxy - miny + 1)};
        }
      }
      vd.video.frames.emplace_back(std::move(px), t);
      vd.labels.push_back(std::move(lm));
    }
    ds.videos.push_back(std::move(vd));
  }
  return ds;
}

// --- PNG --------------------------------------------------------------------

void write_png(const fs::path& path, const Tensor& rgb) {
  if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw ValidationError("write_png expects (3,H,W)");
  const int H = rgb.dim(1), W = rgb.dim(2);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(rgb.at(c, y, x), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * W + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(W);
  img.height = static_cast<png_uint_32>(H);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write png '" + path.string() + "': " + img.message);
  }
}

Tensor read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read png '" + path.string() + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    throw IoError("cannot decode png '" + path.string() + "': " + img.message);
  }
  const int H = static_cast<int>(img.height), W = static_cast<int>(img.width);
  Tensor t({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = buf[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0;
  return t;
}

void write_gray_png(const fs::path& path, int height, int width, std::span<const std::uint8_t> values) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw ValidationError("write_gray_png: size mismatch");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, values.data(), 0, nullptr)) {
    throw IoError("cannot write png '" + path.string() + "': " + img.message);
  }
}

std::vector<std::uint8_t> read_gray_png(const fs::path& path, int& height, int& width) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read png '" + path.string() + "': " + img.message);
  }
  img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    throw IoError("cannot decode png '" + path.string() + "': " + img.message);
  }
  height = static_cast<int>(img.height);
  width = static_cast<int>(img.width);
  return buf;
}

std::string frame_filename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.png", index);
  return buf;
}

void save_frames(const fs::path& dir, const FrameSequence& seq) {
  fs::create_directories(dir);
  for (const auto& f : seq.frames) write_png(dir / frame_filename(f.index), f.pixels);
}

FrameSequence load_frames(const fs::path& dir, double fps) {
  if (!fs::is_directory(dir)) throw IoError("frame directory '" + dir.string() + "' not found");
  std::vector<std::pair<int, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto p = entry.path();
    if (p.extension() != ".png") continue;
    const std::string stem = p.stem().string();
    int idx = 0;
    const auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), idx);
    if (ec != std::errc() || ptr != stem.data() + stem.size()) continue;
    files.emplace_back(idx, p);
  }
  std::sort(files.begin(), files.end());
  FrameSequence seq;
  seq.fps = fps;
  for (const auto& [idx, p] : files) seq.frames.emplace_back(read_png(p), idx);
  return seq;
}

std::string format_box(const BoundingBox& b) {
  return shortest(b.x) + "," + shortest(b.y) + "," + shortest(b.w) + "," + shortest(b.h);
}

BoundingBox parse_box(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string f;
  while (std::getline(ss, f, ',')) v.push_back(parse_double(f, 0));
  if (v.size() != 4) throw ParseError("box needs four comma-separated numbers: '" + text + "'");
  return {v[0], v[1], v[2], v[3]};
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
  namespace pt = boost::property_tree;
  fs::create_directories(dir);
  pt::ptree tree;
  tree.put("dataset.format", "vins-dataset-1");
  tree.put("dataset.videos", dataset.videos.size());
  for (const auto& vd : dataset.videos) {
    const fs::path vdir = dir / vd.name;
    save_frames(vdir / "frames", vd.video);
    save_annotations(vdir / "gt.txt", vd.tracks);
    if (vd.has_masks()) {
      fs::create_directories(vdir / "labels");
      for (std::size_t i = 0; i < vd.labels.size(); ++i) {
        const auto& lm = vd.labels[i];
        write_gray_png(vdir / "labels" / frame_filename(vd.video.frames[i].index), lm.height, lm.width,
                       lm.labels);
      }
    }
    pt::ptree sec;
    sec.put("frames", vd.name + "/frames");
    sec.put("annotations", vd.name + "/gt.txt");
    if (vd.has_masks()) sec.put("labels", vd.name + "/labels");
    sec.put("roi", format_box(vd.roi));
    sec.put("fps", shortest(vd.video.fps));
    tree.add_child(vd.name, sec);
  }
  pt::write_ini((dir / "manifest.ini").string(), tree);
}

Dataset load_dataset(const fs::path& dir) {
  namespace pt = boost::property_tree;
  const fs::path manifest = dir / "manifest.ini";
  if (!fs::exists(manifest)) throw IoError("no manifest.ini in '" + dir.string() + "'");
  pt::ptree tree;
  try {
    pt::read_ini(manifest.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(e.message(), static_cast<int>(e.line()));
  }
  if (tree.get<std::string>("dataset.format", "") != "vins-dataset-1") {
    throw ParseError("manifest '" + manifest.string() + "' has an unknown format");
  }
  Dataset ds;
  for (const auto& [section, sec] : tree) {
    if (section == "dataset") continue;
    VideoData vd;
    vd.name = section;
    const double fps = parse_double(sec.get<std::string>("fps", "10"), 0);
    vd.video = load_frames(dir / sec.get<std::string>("frames"), fps);
    vd.tracks = load_annotations(dir / sec.get<std::string>("annotations"));
    vd.roi = parse_box(sec.get<std::string>("roi"));
    if (auto labels = sec.get_optional<std::string>("labels")) {
      for (const auto& f : vd.video.frames) {
        LabelMap lm;
        lm.labels = read_gray_png(dir / *labels / frame_filename(f.index), lm.height, lm.width);
        vd.labels.push_back(std::move(lm));
      }
    }
    ds.videos.push_back(std::move(vd));
  }
  std::sort(ds.videos.begin(), ds.videos.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return ds;
}

}  // namespace vins
