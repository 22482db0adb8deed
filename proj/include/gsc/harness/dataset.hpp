// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gsc/nn.hpp"
#include "gsc/tensor.hpp"

namespace gsc::harness {

enum class ShapeFamily { kFigure, kCritter, kTower };

struct SubjectSpec {
  ShapeFamily shape = ShapeFamily::kFigure;
  std::size_t color = 0;       // index into the color words
  std::size_t texture = 0;     // plain, striped, dotted
  std::size_t background = 0;  // light, dark, sky

  // "<color> <texture> <shape> <background>"
  std::string prompt() const;
  bool operator==(const SubjectSpec&) const = default;
};

// Rendering style; cloud and edge distributions differ in these parameters.
struct Style {
  std::string name;
  double stroke = 1.0;         // outline width in pixels (0 = none)
  std::array<double, 3> outline{0.05, 0.05, 0.05};
  double scale = 1.0;          // shape size factor
  double hue_shift = 0.0;      // palette rotation in turns
  double saturation = 1.0;

  static Style cloud();
  static Style edge();
};

const std::vector<std::string>& color_words();
const std::vector<std::string>& texture_words();
const std::vector<std::string>& shape_words();
const std::vector<std::string>& background_words();
// Every word used by prompts.
nn::Vocab prompt_vocab();

SubjectSpec parse_subject(const std::string& prompt);

// Deterministic render of one image [3, size, size] in [0, 1].
std::vector<double> render(const SubjectSpec& spec, const Style& style, std::uint64_t seed, std::size_t size = 32);

struct Dataset {
  Tensor images;                     // [N, 3, size, size]
  std::vector<SubjectSpec> specs;
  std::vector<std::string> prompts;
  std::vector<std::vector<std::size_t>> tokens;
};

// count images of uniformly drawn specs (or the given specs cycled when non-empty).
Dataset synth_dataset(const std::vector<SubjectSpec>& specs, const Style& style, std::size_t count,
                      std::uint64_t seed, std::size_t size = 32);

// The three evaluation subjects, one per shape family.
std::vector<SubjectSpec> default_subjects();

}  // namespace gsc::harness
