// SPDX-License-Identifier: Apache-2.0
#include "gsc/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "gsc/rng.hpp"

namespace gsc::harness {

const std::vector<std::string>& color_words() {
  static const std::vector<std::string> w{"red", "green", "blue", "yellow", "purple", "orange"};
  return w;
}
const std::vector<std::string>& texture_words() {
  static const std::vector<std::string> w{"plain", "striped", "dotted"};
  return w;
}
const std::vector<std::string>& shape_words() {
  static const std::vector<std::string> w{"figure", "critter", "tower"};
  return w;
}
const std::vector<std::string>& background_words() {
  static const std::vector<std::string> w{"light", "dark", "sky"};
  return w;
}

nn::Vocab prompt_vocab() {
  std::vector<std::string> words;
  for (const auto* list : {&color_words(), &texture_words(), &shape_words(), &background_words()}) {
    words.insert(words.end(), list->begin(), list->end());
  }
  return nn::Vocab(words);
}

std::string SubjectSpec::prompt() const {
  return color_words().at(color) + " " + texture_words().at(texture) + " " +
         shape_words().at(static_cast<std::size_t>(shape)) + " " + background_words().at(background);
}

namespace {

std::size_t find_word(const std::vector<std::string>& list, const std::string& w, const char* kind) {
  auto it = std::find(list.begin(), list.end(), w);
  if (it == list.end()) throw std::invalid_argument(std::string("unknown ") + kind + " word '" + w + "'");
  return static_cast<std::size_t>(it - list.begin());
}

}  // namespace

SubjectSpec parse_subject(const std::string& prompt) {
  std::istringstream is(prompt);
  std::string c, t, s, b, extra;
  if (!(is >> c >> t >> s >> b) || (is >> extra)) {
    throw std::invalid_argument("subject prompt must have four words: '" + prompt + "'");
  }
  SubjectSpec spec;
  spec.color = find_word(color_words(), c, "color");
  spec.texture = find_word(texture_words(), t, "texture");
  spec.shape = static_cast<ShapeFamily>(find_word(shape_words(), s, "shape"));
  spec.background = find_word(background_words(), b, "background");
  return spec;
}

Style Style::cloud() { return Style{"cloud", 1.0, {0.05, 0.05, 0.05}, 1.0, 0.0, 1.0}; }
Style Style::edge() { return Style{"edge", 0.0, {0.05, 0.05, 0.05}, 1.2, 0.07, 0.55}; }

std::vector<SubjectSpec> default_subjects() {
  return {parse_subject("red striped figure light"), parse_subject("blue dotted critter sky"),
          parse_subject("yellow plain tower dark")};
}

namespace {

using RGB = std::array<double, 3>;

const std::array<RGB, 6> kColors{{{0.85, 0.15, 0.15},
                                  {0.15, 0.70, 0.20},
                                  {0.15, 0.30, 0.85},
                                  {0.90, 0.80, 0.10},
                                  {0.60, 0.20, 0.70},
                                  {0.95, 0.50, 0.10}}};
const std::array<RGB, 3> kBackgrounds{{{0.90, 0.90, 0.88}, {0.12, 0.12, 0.16}, {0.55, 0.75, 0.95}}};

RGB shift_color(const RGB& c, double hue_shift, double saturation) {
  const double mx = std::max({c[0], c[1], c[2]});
  const double mn = std::min({c[0], c[1], c[2]});
  const double v = mx;
  double s = mx > 0.0 ? (mx - mn) / mx : 0.0;
  double h = 0.0;
  if (mx > mn) {
    const double d = mx - mn;
    if (mx == c[0]) h = std::fmod((c[1] - c[2]) / d, 6.0);
    else if (mx == c[1]) h = (c[2] - c[0]) / d + 2.0;
    else h = (c[0] - c[1]) / d + 4.0;
    h /= 6.0;
  }
  h = std::fmod(h + hue_shift + 1.0, 1.0);
  s = std::clamp(s * saturation, 0.0, 1.0);
  const double hh = h * 6.0;
  const int i = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double sq(double x) { return x * x; }

// Membership in a shape drawn on a 32-unit canvas.
bool inside(ShapeFamily family, double x, double y) {
  switch (family) {
    case ShapeFamily::kFigure: {
      const bool head = sq(x - 16) + sq(y - 8) <= sq(3.5);
      const bool body = std::abs(x - 16) <= 3 && y >= 12 && y <= 21;
      const bool arms = std::abs(x - 16) <= 8 && y >= 13 && y <= 15;
      const bool legs = (std::abs(x - 14) <= 1.2 || std::abs(x - 18) <= 1.2) && y >= 21 && y <= 28;
      return head || body || arms || legs;
    }
    case ShapeFamily::kCritter: {
      const bool body = sq((x - 15) / 9) + sq((y - 18) / 5) <= 1.0;
      const bool head = sq(x - 24) + sq(y - 12) <= sq(3.5);
      const bool legs = y >= 21 && y <= 27 &&
                        (std::abs(x - 9) <= 1 || std::abs(x - 13) <= 1 || std::abs(x - 18) <= 1 ||
                         std::abs(x - 21) <= 1);
      const bool tail = x >= 3 && x <= 7 && std::abs((y - 16) - (x - 6) * 1.6) <= 1.0;
      return body || head || legs || tail;
    }
    case ShapeFamily::kTower: {
      const bool wall = std::abs(x - 16) <= 6 && y >= 11 && y <= 28;
      const bool roof = y >= 3 && y < 11 && std::abs(x - 16) <= (y - 3) * 0.875;
      const bool window = (std::abs(x - 13) <= 1 || std::abs(x - 19) <= 1) &&
                          (std::abs(y - 15) <= 1 || std::abs(y - 21) <= 1);
      return (wall && !window) || roof;
    }
  }
  return false;
}

}  // namespace

std::vector<double> render(const SubjectSpec& spec, const Style& style, std::uint64_t seed, std::size_t size) {
  if (size < 8) throw std::invalid_argument("render: image size too small");
  Rng rng(seed);
  const double dx = 4.0 * rng.uniform() - 2.0;
  const double dy = 4.0 * rng.uniform() - 2.0;
  const double s = (0.9 + 0.2 * rng.uniform()) * style.scale;
  const int phase = static_cast<int>(rng.index(4));
  const double unit = 32.0 / static_cast<double>(size);

  std::vector<char> mask(size * size);
  for (std::size_t py = 0; py < size; ++py) {
    for (std::size_t px = 0; px < size; ++px) {
      const double cx = (static_cast<double>(px) + 0.5) * unit;
      const double cy = (static_cast<double>(py) + 0.5) * unit;
      const double x = 16.0 + (cx - 16.0 - dx) / s;
      const double y = 16.0 + (cy - 16.0 - dy) / s;
      mask[py * size + px] = inside(spec.shape, x, y) ? 1 : 0;
    }
  }

  const RGB fill = shift_color(kColors.at(spec.color), style.hue_shift, style.saturation);
  const RGB bg = kBackgrounds.at(spec.background);
  const int reach = static_cast<int>(std::ceil(style.stroke / unit));
  std::vector<double> img(3 * size * size);
  for (std::size_t py = 0; py < size; ++py) {
    for (std::size_t px = 0; px < size; ++px) {
      RGB c;
      if (mask[py * size + px]) {
        c = fill;
        const int xi = static_cast<int>(px) + phase, yi = static_cast<int>(py) + phase;
        if (spec.texture == 1 && ((xi + yi) / 3) % 2 == 0) {
          for (auto& v : c) v *= 0.55;
        } else if (spec.texture == 2 && xi % 4 == 1 && yi % 4 == 1) {
          for (auto& v : c) v = 0.5 * v + 0.5;
        }
      } else {
        bool edge = false;
        for (int oy = -reach; oy <= reach && !edge; ++oy) {
          for (int ox = -reach; ox <= reach && !edge; ++ox) {
            const long qx = static_cast<long>(px) + ox, qy = static_cast<long>(py) + oy;
            if (qx < 0 || qy < 0 || qx >= static_cast<long>(size) || qy >= static_cast<long>(size)) continue;
            if (sq(ox * unit) + sq(oy * unit) > sq(style.stroke) + 1e-9) continue;
            edge = mask[static_cast<std::size_t>(qy) * size + static_cast<std::size_t>(qx)] != 0;
          }
        }
        if (edge) {
          c = style.outline;
        } else {
          const double shade = 0.95 + 0.1 * (static_cast<double>(py) + 0.5) / static_cast<double>(size);
          for (int k = 0; k < 3; ++k) c[k] = std::min(1.0, bg[k] * shade);
        }
      }
      for (int k = 0; k < 3; ++k) img[(k * size + py) * size + px] = std::clamp(c[k], 0.0, 1.0);
    }
  }
  return img;
}

Dataset synth_dataset(const std::vector<SubjectSpec>& specs, const Style& style, std::size_t count,
                      std::uint64_t seed, std::size_t size) {
  if (count == 0) throw std::invalid_argument("synth_dataset: count must be at least 1");
  const nn::Vocab vocab = prompt_vocab();
  Dataset d;
  std::vector<double> pixels;
  pixels.reserve(count * 3 * size * size);
  Rng pick(derive_seed(seed, "synth.pick"));
  for (std::size_t i = 0; i < count; ++i) {
    SubjectSpec spec;
    if (specs.empty()) {
      spec.shape = static_cast<ShapeFamily>(pick.index(shape_words().size()));
      spec.color = pick.index(color_words().size());
      spec.texture = pick.index(texture_words().size());
      spec.background = pick.index(background_words().size());
    } else {
      spec = specs[i % specs.size()];
    }
    const auto img = render(spec, style, derive_seed(seed, "synth.render", i), size);
    pixels.insert(pixels.end(), img.begin(), img.end());
    d.specs.push_back(spec);
    d.prompts.push_back(spec.prompt());
    d.tokens.push_back(nn::tokenize(d.prompts.back(), vocab));
  }
  d.images = Tensor({count, 3, size, size}, std::move(pixels));
  return d;
}

}  // namespace gsc::harness
