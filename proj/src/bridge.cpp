#include "sembridge/bridge.hpp"

#include <sstream>

#include <json.hpp>

namespace sembridge::bridge {

using nlohmann::json;

double phoneme_error_rate(Generator &gen, const std::vector<corpus::Utterance> &utts) {
  if (utts.empty()) throw std::invalid_argument("phoneme_error_rate: empty evaluation set");
  double total = 0;
  for (const auto &u : utts) {
    PhonemeLattice lat = generate_lattice(gen, u.features.frames);
    std::vector<int> hyp = lattice_argmax_collapsed(lat);
    total += static_cast<double>(levenshtein(hyp, u.phonemes)) /
             static_cast<double>(u.phonemes.size());
  }
  return total / static_cast<double>(utts.size());
}

namespace {

TensorT<float> one_hot_sequence(const std::vector<int> &phonemes, int kp) {
  TensorT<float> out(static_cast<int64_t>(phonemes.size()), kp);
  for (size_t i = 0; i < phonemes.size(); ++i) out.at(static_cast<int64_t>(i), phonemes[i]) = 1.0f;
  return out;
}

json gan_config_json(const GanConfig &c) {
  return json{{"lambda_gp", c.lambda_gp}, {"gamma_sp", c.gamma_sp},   {"eta_pd", c.eta_pd},
              {"delta_ss", c.delta_ss},   {"k_clusters", c.k_clusters}, {"steps", c.steps},
              {"batch_size", c.batch_size}, {"lr_g", c.lr_g},           {"lr_d", c.lr_d},
              {"disc_updates_per_gen", c.disc_updates_per_gen},
              {"gen_width", c.gen_width}, {"gen_stride", c.gen_stride},
              {"disc_hidden", c.disc_hidden}, {"disc_width", c.disc_width},
              {"gp_mode", c.gp_mode},     {"gen_gan_loss", c.gen_gan_loss}};
}

}  // namespace

BridgeTrainResult train_bridge(const corpus::CorpusBundle &bundle, const GanConfig &config,
                               uint64_t seed) {
  config.validate();
  if (bundle.unpaired_text.empty())
    throw std::invalid_argument("train_bridge: unpaired text corpus is empty");
  if (bundle.train.empty()) throw std::invalid_argument("train_bridge: empty train split");

  const corpus::LanguageSpec &spec = bundle.spec;
  const int kp = spec.k_phonemes;

  Rng root(seed);
  Rng rng_g = root.split(11), rng_d = root.split(12), rng_aux = root.split(13);
  Rng order = root.split(14);

  Generator gen(spec.feature_dim, kp, config, rng_g);
  Discriminator disc(kp, config, rng_d);
  LinearT<float> aux_head("aux.head", kp, config.k_clusters, rng_aux, true);

  // k-means cluster targets over all train acoustic frames
  int64_t total_frames = 0;
  for (const auto &u : bundle.train) total_frames += u.features.frames.rows;
  TensorT<float> all_frames(total_frames, spec.feature_dim);
  {
    int64_t row = 0;
    for (const auto &u : bundle.train)
      for (int64_t r = 0; r < u.features.frames.rows; ++r, ++row)
        for (int64_t c = 0; c < spec.feature_dim; ++c)
          all_frames.at(row, c) = u.features.frames.at(r, c);
  }
  KmeansResult clusters =
      kmeans(all_frames, config.k_clusters, config.kmeans_iters, root.split(15).next_u64());
  gen.centroids = clusters.centroids;

  // cache conv inputs and per-step cluster targets per train utterance
  std::vector<TensorT<float>> utt_inputs;
  std::vector<std::vector<int64_t>> utt_step_clusters;
  {
    int64_t offset = 0;
    for (const auto &u : bundle.train) {
      Generator::Prepared prep = gen.prepare(u.features.frames);
      if (!prep.step_clusters.empty()) {
        utt_step_clusters.push_back(prep.step_clusters);
      } else {
        int64_t rows = u.features.frames.rows;
        std::vector<int> frame_clusters(static_cast<size_t>(rows));
        for (int64_t r = 0; r < rows; ++r)
          frame_clusters[static_cast<size_t>(r)] =
              clusters.assignment[static_cast<size_t>(offset + r)];
        utt_step_clusters.push_back(
            step_clusters_from_frames(frame_clusters, prep.stride_map, config.k_clusters));
      }
      utt_inputs.push_back(std::move(prep.input));
      offset += u.features.frames.rows;
    }
  }

  Rng repeat_rng = root.split(16);
  const bool repeat_match = config.real_repeat_match && !config.gen_segment_pool;
  std::vector<TensorT<float>> real_pool;
  for (const auto &sentence : bundle.unpaired_text) {
    std::vector<int> phonemes = corpus::expand_phonemes(spec, sentence);
    if (repeat_match) {
      std::vector<int> repeated;
      for (int p : phonemes) {
        int64_t dur = repeat_rng.uniform_int(spec.dur_min, spec.dur_max);
        int64_t offset = repeat_rng.uniform_int(0, config.gen_stride - 1);
        int64_t reps = std::max<int64_t>(1, (dur + offset) / config.gen_stride);
        for (int64_t r = 0; r < reps; ++r) repeated.push_back(p);
      }
      phonemes = std::move(repeated);
    }
    TensorT<float> oh = one_hot_sequence(phonemes, kp);
    if (config.real_label_smooth > 0) {
      float alpha = static_cast<float>(config.real_label_smooth);
      for (auto &v : oh.data) v = v * (1.0f - alpha) + alpha / static_cast<float>(kp);
    }
    real_pool.push_back(std::move(oh));
  }

  std::vector<ParameterT<float> *> gen_side = gen.params();
  for (auto *p : aux_head.params()) gen_side.push_back(p);
  AdamConfig adam_g;
  adam_g.lr = config.lr_g;
  AdamConfig adam_d;
  adam_d.lr = config.lr_d;
  AdamT<float> opt_g(gen_side, adam_g);
  AdamT<float> opt_d(disc.params(), adam_d);

  BridgeTrainResult result;

  for (int step = 1; step <= config.steps; ++step) {
    std::vector<size_t> batch_utts, batch_text;
    for (int i = 0; i < config.batch_size; ++i) {
      batch_utts.push_back(static_cast<size_t>(
          order.uniform_int(0, static_cast<int64_t>(bundle.train.size()) - 1)));
      batch_text.push_back(static_cast<size_t>(
          order.uniform_int(0, static_cast<int64_t>(real_pool.size()) - 1)));
    }
    float mu = static_cast<float>(order.uniform());

    TrainLogRow row;
    row.step = step;

    auto add_noise = [&](const TensorT<float> &x) {
      TensorT<float> n = x;
      if (config.disc_input_noise > 0)
        for (auto &v : n.data)
          v += static_cast<float>(order.normal() * config.disc_input_noise);
      return n;
    };

    try {
      // discriminator phase: ascend L_gan, keep the input-gradient norm near 1
      for (int du = 0; du < config.disc_updates_per_gen; ++du) {
        FreezeGuard<float> freeze_gen(gen_side);
        Tape<float> tape;
        BinderT<float> binder(tape);

        std::vector<Var<float>> real_probs, fake_probs;
        std::vector<TensorT<float>> real_vals, fake_vals;
        for (int i = 0; i < config.batch_size; ++i) {
          TensorT<float> real = add_noise(real_pool[batch_text[static_cast<size_t>(i)]]);
          real_probs.push_back(disc.prob(binder, tape.constant(real)));
          real_vals.push_back(std::move(real));
          Var<float> fake =
              gen.probs_from(binder, utt_inputs[batch_utts[static_cast<size_t>(i)]]);
          TensorT<float> fake_noised = add_noise(fake.value());
          fake_probs.push_back(disc.prob(binder, tape.constant(fake_noised)));
          fake_vals.push_back(std::move(fake_noised));
        }
        Var<float> lgan = loss_gan(tape, real_probs, fake_probs);
        Var<float> obj_d = tape.neg(lgan);
        if (config.lambda_gp > 0) {
          Var<float> gp = loss_gradient_penalty(tape, disc, binder, real_vals, fake_vals, mu,
                                                config.gp_mode, static_cast<float>(config.gp_fd_eps));
          row.l_gp = gp.value().item();
          obj_d = tape.add(obj_d, tape.smul(gp, static_cast<float>(config.lambda_gp)));
        }
        auto grads = grad_params(binder, obj_d, disc.params());
        opt_d.step(grads);
      }

      // generator phase: descend the full objective; discriminator frozen
      {
        FreezeGuard<float> freeze_disc(disc.params());
        Tape<float> tape;
        BinderT<float> binder(tape);

        std::vector<Var<float>> probs_batch, real_probs, fake_probs;
        Var<float> sp_acc = tape.constant_scalar(0.0f);
        Var<float> ss_acc = tape.constant_scalar(0.0f);
        for (int i = 0; i < config.batch_size; ++i) {
          Var<float> probs =
              gen.probs_from(binder, utt_inputs[batch_utts[static_cast<size_t>(i)]]);
          probs_batch.push_back(probs);
          Var<float> fake_in = probs;
          if (config.disc_input_noise > 0) {
            TensorT<float> noise(probs.value().rows, probs.value().cols);
            for (auto &v : noise.data)
              v = static_cast<float>(order.normal() * config.disc_input_noise);
            fake_in = tape.add(probs, tape.constant(noise));
          }
          fake_probs.push_back(disc.prob(binder, fake_in));
          real_probs.push_back(disc.prob(
              binder, tape.constant(add_noise(real_pool[batch_text[static_cast<size_t>(i)]]))));
          sp_acc = tape.add(sp_acc, loss_smoothness(tape, probs));
          ss_acc = tape.add(ss_acc,
                            loss_reconstruction(tape, aux_head, binder, probs,
                                                utt_step_clusters[batch_utts[static_cast<size_t>(i)]]));
        }
        float inv_b = 1.0f / static_cast<float>(config.batch_size);
        Var<float> l_sp = tape.smul(sp_acc, inv_b);
        Var<float> l_ss = tape.smul(ss_acc, inv_b);
        Var<float> l_pd = loss_diversity(tape, probs_batch);
        Var<float> l_gan = loss_gan(tape, real_probs, fake_probs);

        Var<float> gan_part;
        if (config.gen_gan_loss == "saturating") {
          // the literal objective: minimize E[log(1 - C(fake))]
          Var<float> acc = tape.constant_scalar(0.0f);
          for (Var<float> p : fake_probs)
            acc = tape.add(acc, tape.log_v(tape.clamp_v(tape.sadd(tape.neg(p), 1.0f), 1e-7f,
                                                        1.0f - 1e-7f)));
          gan_part = tape.smul(acc, inv_b);
        } else {
          // non-saturating surrogate: minimize -E[log C(fake)]
          Var<float> acc = tape.constant_scalar(0.0f);
          for (Var<float> p : fake_probs)
            acc = tape.add(acc, tape.log_v(tape.clamp_v(p, 1e-7f, 1.0f - 1e-7f)));
          gan_part = tape.neg(tape.smul(acc, inv_b));
        }

        Var<float> obj_g = gan_part;
        if (config.gamma_sp > 0)
          obj_g = tape.add(obj_g, tape.smul(l_sp, static_cast<float>(config.gamma_sp)));
        if (config.eta_pd > 0)
          obj_g = tape.add(obj_g, tape.smul(l_pd, static_cast<float>(config.eta_pd)));
        if (config.delta_ss > 0)
          obj_g = tape.add(obj_g, tape.smul(l_ss, static_cast<float>(config.delta_ss)));

        auto grads = grad_params(binder, obj_g, gen_side);
        opt_g.step(grads);

        row.l_gan = l_gan.value().item();
        row.l_sp = l_sp.value().item();
        row.l_pd = l_pd.value().item();
        row.l_ss = l_ss.value().item();
        row.objective = row.l_gan + config.lambda_gp * row.l_gp + config.gamma_sp * row.l_sp +
                        config.eta_pd * row.l_pd + config.delta_ss * row.l_ss;
      }
    } catch (const std::runtime_error &e) {
      throw std::runtime_error("train_bridge: divergence at step " + std::to_string(step) + ": " +
                               e.what());
    }

    if (step % config.eval_every == 0 || step == config.steps)
      row.dev_per = phoneme_error_rate(gen, bundle.dev);
    result.log.push_back(row);
  }

  result.final_dev_per = phoneme_error_rate(gen, bundle.dev);
  result.clusters = clusters;

  Checkpoint ckpt;
  for (auto *p : gen.params())
    ckpt.entries.push_back(CheckpointEntry{p->name, p->value, p->frozen, "generator", true});
  ckpt.entries.push_back(
      CheckpointEntry{"generator.centroids", clusters.centroids, true, "generator", true});
  // discarded at inference; kept for training resumption and analysis
  for (auto *p : aux_head.params())
    ckpt.entries.push_back(CheckpointEntry{p->name, p->value, p->frozen, "aux", false});
  for (auto *p : disc.params())
    ckpt.entries.push_back(CheckpointEntry{p->name, p->value, p->frozen, "discriminator", false});
  json meta{{"stage", "bridge"},
            {"seed", seed},
            {"corpus_hash", corpus::corpus_content_hash(bundle)},
            {"final_dev_per", result.final_dev_per},
            {"config", gan_config_json(config)}};
  ckpt.meta_json = meta.dump();
  result.checkpoint = std::move(ckpt);
  return result;
}

Generator generator_from_checkpoint(const Checkpoint &ckpt, const corpus::LanguageSpec &spec,
                                    const GanConfig &config) {
  Rng dummy(0);
  Generator gen(spec.feature_dim, spec.k_phonemes, config, dummy);
  size_t restored = restore_params(ckpt, gen.params());
  if (restored != gen.params().size())
    throw std::runtime_error("generator_from_checkpoint: missing generator parameters");
  if (gen.segment_pool) {
    const CheckpointEntry *cent = ckpt.find("generator.centroids");
    if (cent == nullptr)
      throw std::runtime_error("generator_from_checkpoint: centroids missing from checkpoint");
    gen.centroids = cent->value;
  }
  return gen;
}

}  // namespace sembridge::bridge
