// Minimal use of the library: synthesize a tone, extract features, run a
// seeded random model both whole and in four tiles, print the class.

#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include "binsed/binsed.hpp"

int main() {
  using namespace binsed;
  const auto model = gen_random_model(7);
  const Frontend fe(model.frontend);

  std::vector<float> audio(static_cast<std::size_t>(model.frontend.patch_samples()));
  for (std::size_t n = 0; n < audio.size(); ++n)
    audio[n] = static_cast<float>(0.3 * std::sin(2.0 * std::numbers::pi * 1000.0 * static_cast<double>(n) / 16000.0));
  const auto input = fe.mel_spectrogram(audio).tensor;

  const auto whole = run_monolithic(model, input);
  const auto tiles = run_tiled(model, input, make_tile_plan(model.spec, 4));
  std::printf("class %zu (tiled: %zu, identical maps: %s)\n", whole.predicted, tiles.predicted,
              whole.final_map == tiles.final_map ? "yes" : "no");
  for (std::size_t k = 0; k < whole.pool.sums.size(); ++k) std::printf("%2zu %9.4f\n", k, whole.pool.mean(k));
  return whole.final_map == tiles.final_map ? 0 : 1;
}
