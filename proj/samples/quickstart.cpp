// Synthesizes a tiny dataset, trains for a few epochs and scores the
// held-out scenes.
//
//   quickstart [out_dir] [epochs]

#include <cstdlib>
#include <iostream>

#include "nirvis/experiment.hpp"
#include "nirvis/runtime.hpp"

using namespace nirvis;

int main(int argc, char** argv) {
  tune_allocator();
  const fs::path root = argc > 1 ? argv[1] : "quickstart_out";
  const int epochs = argc > 2 ? std::atoi(argv[2]) : 3;

  SynthesisConfig synth;
  synth.scenes = 4;
  synth.seed = 1;
  const Manifest m = synthesize_dataset(synth, root / "data");
  std::cout << "scenes " << m.scenes.size() << ", test ids " << m.test_ids.size() << "\n";

  TrainConfig cfg = TrainConfig::desk();
  cfg.epochs = epochs;
  Pipeline<float> net(PipelineTopology{}, cfg.seed);
  std::cout << "parameters " << net.params().scalar_count() << "\n";

  Trainer trainer(net, cfg);
  trainer.train(load_split(root / "data", m, m.train_ids), root / "ckpt",
                [](const EpochStats& s) { std::cout << csv_row(s) << "\n"; });

  const Evaluation ev = evaluate(net, load_split(root / "data", m, m.test_ids));
  std::cout << to_json(ev).dump(2) << "\n";
}
