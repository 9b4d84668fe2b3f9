// Samples the default toy target with each guidance strategy and prints the metrics.
#include <iostream>

#include "dog/dog.hpp"

int main() {
  using namespace dog;
  const auto schedule = make_linear_schedule(1000, 1e-4, 0.02);
  const ConditionVocab vocab;
  const auto gmm = build_toy_gmm(vocab.content_vocab, vocab.style_vocab, 4, 11);
  const AnalyticDenoiser model(gmm, vocab, schedule);

  const auto targets = make_eval_targets(gmm, {embed_condition(vocab, 0, 1)}, 1024, 99, default_blowup_bound(gmm));
  std::vector<std::uint64_t> seeds(16);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;

  std::cout << "strategy  gs  fidelity_w2  diversity  blowup_rate\n";
  for (auto s : {Strategy::kNone, Strategy::kCfg, Strategy::kApg, Strategy::kDog}) {
    GuidanceConfig g;
    g.strategy = s;
    for (double gs : {2.0, 30.0}) {
      g.gs = gs;
      const auto r = evaluate(model, g, schedule, seeds, targets);
      std::cout << r.strategy << "  " << gs << "  " << r.fidelity_w2 << "  " << r.diversity << "  " << r.blowup_rate
                << "\n";
    }
  }
}
