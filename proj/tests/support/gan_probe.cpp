// Scratch driver for tuning the bridge GAN on the default corpus.
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "sembridge/bridge.hpp"

using namespace sembridge;

int main(int argc, char **argv) {
  bridge::GanConfig cfg;
  corpus::CorpusCounts counts;
  counts.train = 200;
  counts.dev = 50;
  counts.test = 50;
  counts.text_only = 400;
  counts.sqa_per_split = 0;
  double noise = 0.05;
  uint64_t corpus_seed = 1;
  int n_seeds = 1;

  for (int i = 1; i + 1 < argc; i += 2) {
    std::string k = argv[i];
    double v = std::atof(argv[i + 1]);
    if (k == "--steps") cfg.steps = static_cast<int>(v);
    else if (k == "--lr_g") cfg.lr_g = v;
    else if (k == "--lr_d") cfg.lr_d = v;
    else if (k == "--lambda") cfg.lambda_gp = v;
    else if (k == "--gamma") cfg.gamma_sp = v;
    else if (k == "--eta") cfg.eta_pd = v;
    else if (k == "--delta") cfg.delta_ss = v;
    else if (k == "--batch") cfg.batch_size = static_cast<int>(v);
    else if (k == "--k") cfg.k_clusters = static_cast<int>(v);
    else if (k == "--width") cfg.gen_width = static_cast<int>(v);
    else if (k == "--stride") cfg.gen_stride = static_cast<int>(v);
    else if (k == "--hidden") cfg.disc_hidden = static_cast<int>(v);
    else if (k == "--dupdates") cfg.disc_updates_per_gen = static_cast<int>(v);
    else if (k == "--noise") noise = v;
    else if (k == "--seeds") n_seeds = static_cast<int>(v);
    else if (k == "--innoise") cfg.disc_input_noise = v;
    else if (k == "--smooth") cfg.real_label_smooth = v;
    else if (k == "--satur") cfg.gen_gan_loss = v > 0 ? "saturating" : "nonsaturating";
    else { std::fprintf(stderr, "unknown arg %s\n", k.c_str()); return 1; }
  }
  cfg.eval_every = 200;

  auto spec = corpus::build_language(corpus_seed, {8, 20, 4, 2});
  auto bundle = corpus::generate_corpus(spec, counts, noise);

  double chance = 1.0 - 1.0 / spec.k_phonemes;
  std::printf("chance=%.4f target=%.4f\n", chance, 0.5 * chance);
  double mean_per = 0;
  for (int s = 1; s <= n_seeds; ++s) {
    auto t0 = std::chrono::steady_clock::now();
    auto res = bridge::train_bridge(bundle, cfg, static_cast<uint64_t>(s));
    auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("seed %d: dev PER %.4f (%.1fs)\n", s, res.final_dev_per, dt);
    for (const auto &row : res.log)
      if (row.dev_per >= 0)
        std::printf("  step %4d  gan %7.4f gp %7.4f sp %7.4f pd %7.4f ss %7.4f  per %.4f\n",
                    row.step, row.l_gan, row.l_gp, row.l_sp, row.l_pd, row.l_ss, row.dev_per);
    mean_per += res.final_dev_per;
  }
  std::printf("mean dev PER %.4f\n", mean_per / n_seeds);
  return 0;
}
