#pragma once

#include "gtb/dataset.hpp"
#include "gtb/imaging.hpp"
#include "gtb/nn.hpp"

namespace fixture {

// Synthetic images resized and standardized to `side`.
inline gtb::ExampleSet synthetic_set(std::size_t samples, std::size_t side = 32, std::uint64_t seed = 7) {
  gtb::SyntheticOptions o;
  o.samples = samples;
  o.seed = seed;
  const auto corpus = gtb::make_synthetic_corpus(o);
  gtb::ExampleSet set(side);
  for (std::size_t i = 0; i < corpus.records.size(); ++i)
    set.add(corpus.records[i], gtb::standardize(gtb::resize_bilinear(corpus.images[i], side)));
  return set;
}

inline gtb::MicroResNetConfig small_model(int side = 8) {
  gtb::MicroResNetConfig c;
  c.stem_filters = 4;
  c.blocks = {{4, 1}, {8, 2}};
  c.input_side = side;
  return c;
}

inline std::vector<std::string> ids_of(const gtb::ExampleSet& set) {
  std::vector<std::string> ids;
  for (const auto& r : set.records()) ids.push_back(r.image_id);
  return ids;
}

}  // namespace fixture
