#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sembridge/corpus.hpp"
#include "sembridge/ctc.hpp"
#include "sembridge/edit_distance.hpp"
#include "sembridge/kmeans.hpp"
#include "sembridge/lattice.hpp"
#include "sembridge/nn.hpp"
#include "sembridge/serialize.hpp"

namespace sembridge::bridge {

struct GanConfig {
  double lambda_gp = 1.5;   // gradient penalty weight
  double gamma_sp = 0.5;    // smoothness weight
  double eta_pd = 3e-3;     // diversity weight
  double delta_ss = 0.3;    // reconstruction weight
  int k_clusters = 8;
  int steps = 2000;
  int batch_size = 8;
  double lr_g = 4e-3;
  double lr_d = 2e-3;
  int disc_updates_per_gen = 1;
  int gen_width = 4;
  int gen_stride = 2;
  // pool consecutive same-cluster frames into segment features before the
  // generator (the classic unsupervised-ASR preprocessing); falls back to a
  // strided frame-level conv when off
  bool gen_segment_pool = true;
  int gen_seg_width = 1;  // conv width over segments (odd)
  int disc_hidden = 48;
  int disc_width = 3;
  std::string gp_mode = "exact";      // "exact" second-order or "fd" surrogate
  double gp_fd_eps = 1e-3;
  std::string gen_gan_loss = "nonsaturating";  // or "saturating" (the literal objective)
  int eval_every = 250;
  int kmeans_iters = 20;
  // keeps the discriminator from separating real/fake on sharpness alone
  double disc_input_noise = 0.1;
  double real_label_smooth = 0.1;
  // repeat real phonemes to match the generator's steps-per-phoneme
  // statistics (duration / stride), removing run-length as a cheat signal
  bool real_repeat_match = true;

  void validate() const {
    if (lambda_gp < 0 || gamma_sp < 0 || eta_pd < 0 || delta_ss < 0)
      throw std::invalid_argument("gan config: loss weights must be >= 0");
    if (k_clusters < 2) throw std::invalid_argument("gan config: k_clusters must be >= 2");
    if (gp_mode != "exact" && gp_mode != "fd")
      throw std::invalid_argument("gan config: gp_mode must be exact or fd");
    if (gen_gan_loss != "nonsaturating" && gen_gan_loss != "saturating")
      throw std::invalid_argument("gan config: gen_gan_loss must be nonsaturating or saturating");
    if (gen_seg_width % 2 != 1)
      throw std::invalid_argument("gan config: gen_seg_width must be odd");
  }
};

// Convolutional phoneme generator: frames (T x D) -> per-step phoneme
// distributions (T' x K_p). With segment pooling on, consecutive frames with
// the same k-means cluster are mean-pooled first and the conv runs at
// segment rate; otherwise the conv runs strided over raw frames.
template <typename T>
struct GeneratorT {
  Conv1dT<T> conv;
  int n_phonemes = 0;
  bool segment_pool = true;
  TensorT<float> centroids;  // required for pooling; set after k-means

  GeneratorT() = default;
  GeneratorT(int feature_dim, int n_phonemes_, const GanConfig &cfg, Rng &rng)
      : n_phonemes(n_phonemes_), segment_pool(cfg.gen_segment_pool) {
    ConvSpec spec = segment_pool
                        ? ConvSpec{cfg.gen_seg_width, 1, (cfg.gen_seg_width - 1) / 2}
                        : ConvSpec{cfg.gen_width, cfg.gen_stride,
                                   (cfg.gen_width - cfg.gen_stride + 1) / 2};
    conv = Conv1dT<T>("generator.conv", feature_dim, n_phonemes_, spec, rng, true);
  }

  int64_t receptive_field() const { return conv.spec.width; }

  struct Prepared {
    TensorT<T> input;                                    // conv input (frames or segments)
    std::vector<std::pair<int64_t, int64_t>> stride_map; // step -> input-frame span
    std::vector<int64_t> step_clusters;                  // pooled mode only
  };

  Prepared prepare(const TensorT<float> &frames) const {
    Prepared prep;
    if (!segment_pool) {
      if (frames.rows + 2 * conv.spec.padding < conv.spec.width)
        throw std::invalid_argument("generator: input shorter than receptive field");
      prep.input = frames.template cast<T>();
      int64_t t_out = conv_out_len(frames.rows, conv.spec);
      for (int64_t j = 0; j < t_out; ++j) {
        int64_t begin = j * conv.spec.stride - conv.spec.padding;
        int64_t end = begin + conv.spec.width;
        prep.stride_map.emplace_back(std::max<int64_t>(begin, 0),
                                     std::min<int64_t>(end, frames.rows));
      }
      return prep;
    }
    if (centroids.rows == 0)
      throw std::logic_error("generator: segment pooling requires centroids");
    if (frames.rows < 1) throw std::invalid_argument("generator: empty input");
    std::vector<int> assign(static_cast<size_t>(frames.rows));
    for (int64_t r = 0; r < frames.rows; ++r)
      assign[static_cast<size_t>(r)] =
          kmeans_assign(centroids, &frames.data[static_cast<size_t>(r * frames.cols)], frames.cols);
    int64_t begin = 0;
    std::vector<std::pair<int64_t, int64_t>> runs;
    for (int64_t r = 1; r <= frames.rows; ++r) {
      if (r == frames.rows || assign[static_cast<size_t>(r)] != assign[static_cast<size_t>(begin)]) {
        runs.emplace_back(begin, r);
        if (r < frames.rows) begin = r;
      }
    }
    prep.input = TensorT<T>(static_cast<int64_t>(runs.size()), frames.cols);
    for (size_t i = 0; i < runs.size(); ++i) {
      auto [b, e] = runs[i];
      for (int64_t c = 0; c < frames.cols; ++c) {
        double acc = 0;
        for (int64_t r = b; r < e; ++r) acc += frames.at(r, c);
        prep.input.at(static_cast<int64_t>(i), c) = static_cast<T>(acc / static_cast<double>(e - b));
      }
      prep.step_clusters.push_back(assign[static_cast<size_t>(b)]);
    }
    prep.stride_map = std::move(runs);
    return prep;
  }

  Var<T> logits_from(BinderT<T> &b, const TensorT<T> &input) {
    return conv.forward(b, b.tape().constant(input));
  }

  Var<T> probs_from(BinderT<T> &b, const TensorT<T> &input) {
    return b.tape().softmax_rows(logits_from(b, input));
  }

  Var<T> probs(BinderT<T> &b, const TensorT<float> &frames) {
    return probs_from(b, prepare(frames).input);
  }

  std::vector<ParameterT<T> *> params() { return conv.params(); }
};

// Inference-path lattice (no gradients).
template <typename T>
PhonemeLattice generate_lattice(GeneratorT<T> &gen, const TensorT<float> &frames) {
  typename GeneratorT<T>::Prepared prep = gen.prepare(frames);
  Tape<T> tape;
  BinderT<T> binder(tape);
  Var<T> lp = tape.log_softmax_rows(gen.logits_from(binder, prep.input));
  PhonemeLattice lat;
  lat.log_probs = lp.value().template cast<float>();
  lat.stride_map = std::move(prep.stride_map);
  return lat;
}

// Convolutional phoneme-sequence discriminator; outputs a probability
// in (0, 1) per sequence of phoneme distributions.
template <typename T>
struct DiscriminatorT {
  Conv1dT<T> conv1, conv2;

  DiscriminatorT() = default;
  DiscriminatorT(int n_phonemes, const GanConfig &cfg, Rng &rng) {
    ConvSpec s1{cfg.disc_width, 1, (cfg.disc_width - 1) / 2};
    conv1 = Conv1dT<T>("discriminator.conv1", n_phonemes, cfg.disc_hidden, s1, rng, true);
    ConvSpec s2{cfg.disc_width, 1, (cfg.disc_width - 1) / 2};
    conv2 = Conv1dT<T>("discriminator.conv2", cfg.disc_hidden, 1, s2, rng, true);
  }

  Var<T> prob(BinderT<T> &b, Var<T> seq) {
    Tape<T> &t = b.tape();
    Var<T> h = t.relu(conv1.forward(b, seq));
    Var<T> score = mean_all(t, conv2.forward(b, h));
    return t.sigmoid(score);
  }

  std::vector<ParameterT<T> *> params() {
    std::vector<ParameterT<T> *> ps;
    for (auto *p : conv1.params()) ps.push_back(p);
    for (auto *p : conv2.params()) ps.push_back(p);
    return ps;
  }
};

// ---- Loss terms ----------------------------------------------------------

// E_real[log C] + E_fake[log(1 - C)]. Inputs are probabilities in (0, 1);
// values outside that range (before the clamping window) are an error.
template <typename T>
Var<T> loss_gan(Tape<T> &t, const std::vector<Var<T>> &real_probs,
                const std::vector<Var<T>> &fake_probs) {
  if (real_probs.empty() || fake_probs.empty())
    throw std::invalid_argument("loss_gan: empty batch");
  const T eps = T(1e-7);
  auto check = [](Var<T> p) {
    T v = p.value().item();
    if (!(v >= T(0) && v <= T(1)))
      throw std::invalid_argument("loss_gan: discriminator output outside (0,1)");
  };
  Var<T> acc_real = t.constant_scalar(T(0));
  for (Var<T> p : real_probs) {
    check(p);
    acc_real = t.add(acc_real, t.log_v(t.clamp_v(p, eps, T(1) - eps)));
  }
  Var<T> acc_fake = t.constant_scalar(T(0));
  for (Var<T> p : fake_probs) {
    check(p);
    acc_fake = t.add(acc_fake, t.log_v(t.clamp_v(t.sadd(t.neg(p), T(1)), eps, T(1) - eps)));
  }
  return t.add(t.smul(acc_real, T(1) / static_cast<T>(real_probs.size())),
               t.smul(acc_fake, T(1) / static_cast<T>(fake_probs.size())));
}

// (||grad_x C(mu*fake + (1-mu)*real)|| - 1)^2 averaged over pairs; pairs are
// truncated to their common length. "exact" differentiates the input gradient
// again; "fd" builds a central-difference surrogate of the input gradient so
// the penalty still trains without double-backward.
template <typename T>
Var<T> loss_gradient_penalty(Tape<T> &t, const std::function<Var<T>(Tape<T> &, Var<T>)> &critic,
                             const std::vector<TensorT<T>> &real,
                             const std::vector<TensorT<T>> &fake, T mu,
                             const std::string &mode = "exact", T fd_eps = T(1e-3)) {
  if (real.size() != fake.size() || real.empty())
    throw std::invalid_argument("loss_gradient_penalty: bad batch");
  Var<T> acc = t.constant_scalar(T(0));
  for (size_t i = 0; i < real.size(); ++i) {
    if (real[i].cols != fake[i].cols)
      throw std::invalid_argument("loss_gradient_penalty: channel mismatch");
    int64_t len = std::min(real[i].rows, fake[i].rows);
    TensorT<T> mix(len, real[i].cols);
    for (int64_t r = 0; r < len; ++r)
      for (int64_t c = 0; c < mix.cols; ++c)
        mix.at(r, c) = mu * fake[i].at(r, c) + (T(1) - mu) * real[i].at(r, c);

    Var<T> norm;
    if (mode == "exact") {
      Var<T> x = t.leaf(mix, true);
      Var<T> c = critic(t, x);
      Var<T> gx = t.grad_vars(c, {x})[0];
      norm = l2_norm(t, gx, T(1e-16));
    } else if (mode == "fd") {
      Var<T> sq_sum = t.constant_scalar(T(0));
      for (int64_t r = 0; r < len; ++r)
        for (int64_t c = 0; c < mix.cols; ++c) {
          TensorT<T> up = mix, dn = mix;
          up.at(r, c) += fd_eps;
          dn.at(r, c) -= fd_eps;
          Var<T> diff = t.sub(critic(t, t.constant(up)), critic(t, t.constant(dn)));
          Var<T> g = t.smul(diff, T(1) / (T(2) * fd_eps));
          sq_sum = t.add(sq_sum, t.mul(g, g));
        }
      norm = t.pow_const(t.sadd(sq_sum, T(1e-16)), T(0.5));
    } else {
      throw std::invalid_argument("loss_gradient_penalty: unknown mode " + mode);
    }
    Var<T> pen = t.pow_const(t.sadd(norm, T(-1)), T(2));
    acc = t.add(acc, pen);
  }
  return t.smul(acc, T(1) / static_cast<T>(real.size()));
}

template <typename T>
Var<T> loss_gradient_penalty(Tape<T> &t, DiscriminatorT<T> &disc, BinderT<T> &binder,
                             const std::vector<TensorT<T>> &real,
                             const std::vector<TensorT<T>> &fake, T mu,
                             const std::string &mode = "exact", T fd_eps = T(1e-3)) {
  std::function<Var<T>(Tape<T> &, Var<T>)> critic = [&](Tape<T> &tape, Var<T> x) {
    (void)tape;
    return disc.prob(binder, x);
  };
  return loss_gradient_penalty(t, critic, real, fake, mu, mode, fd_eps);
}

// Sum over consecutive step pairs of the squared distance between phoneme
// distributions. Zero for fewer than two steps.
template <typename T>
Var<T> loss_smoothness(Tape<T> &t, Var<T> probs) {
  int64_t steps = probs.value().rows;
  if (steps < 2) return t.constant_scalar(T(0));
  Var<T> diff = t.sub(t.slice_rows(probs, 1, steps), t.slice_rows(probs, 0, steps - 1));
  return t.sum_all(t.mul(diff, diff));
}

// Mean over the batch of minus the entropy of each utterance's time-averaged
// phoneme distribution; minimizing this maximizes entropy.
template <typename T>
Var<T> loss_diversity(Tape<T> &t, const std::vector<Var<T>> &prob_batch) {
  if (prob_batch.empty()) throw std::invalid_argument("loss_diversity: empty batch");
  Var<T> acc = t.constant_scalar(T(0));
  for (Var<T> probs : prob_batch) {
    int64_t steps = probs.value().rows;
    Var<T> mean_dist = t.smul(t.colwise_sum(probs), T(1) / static_cast<T>(steps));
    Var<T> neg_entropy = t.sum_all(t.mul(mean_dist, t.log_v(t.sadd(mean_dist, T(1e-12)))));
    acc = t.add(acc, neg_entropy);
  }
  return t.smul(acc, T(1) / static_cast<T>(prob_batch.size()));
}

// Cross entropy, summed over steps, of the aux head predicting each step's
// cluster id from the generator output distribution.
template <typename T>
Var<T> loss_reconstruction(Tape<T> &t, LinearT<T> &aux_head, BinderT<T> &binder, Var<T> probs,
                           const std::vector<int64_t> &step_clusters) {
  if (static_cast<int64_t>(step_clusters.size()) != probs.value().rows)
    throw std::invalid_argument("loss_reconstruction: cluster/step length mismatch");
  Var<T> logits = aux_head.forward(binder, probs);
  return cross_entropy_rows(t, logits, step_clusters, /*reduce_mean=*/false);
}

// Majority-vote cluster per generator step over its input-frame span; ties
// break toward the smaller cluster id.
inline std::vector<int64_t> step_clusters_from_frames(
    const std::vector<int> &frame_clusters,
    const std::vector<std::pair<int64_t, int64_t>> &stride_map, int k_clusters) {
  std::vector<int64_t> out;
  for (auto [begin, end] : stride_map) {
    std::vector<int> counts(static_cast<size_t>(k_clusters), 0);
    for (int64_t f = begin; f < end && f < static_cast<int64_t>(frame_clusters.size()); ++f)
      ++counts[static_cast<size_t>(frame_clusters[static_cast<size_t>(f)])];
    int best = 0;
    for (int k = 1; k < k_clusters; ++k)
      if (counts[static_cast<size_t>(k)] > counts[static_cast<size_t>(best)]) best = k;
    out.push_back(best);
  }
  return out;
}

// ---- training ------------------------------------------------------------

struct TrainLogRow {
  int step = 0;
  double l_gan = 0, l_gp = 0, l_sp = 0, l_pd = 0, l_ss = 0;
  double objective = 0;
  double dev_per = -1;  // only on eval steps
};

struct BridgeTrainResult {
  Checkpoint checkpoint;            // generator (exported) + aux/discriminator
  std::vector<TrainLogRow> log;
  double final_dev_per = 1.0;
  KmeansResult clusters;
};

using Generator = GeneratorT<float>;
using Discriminator = DiscriminatorT<float>;

double phoneme_error_rate(Generator &gen, const std::vector<corpus::Utterance> &utts);

BridgeTrainResult train_bridge(const corpus::CorpusBundle &bundle, const GanConfig &config,
                               uint64_t seed);

// Rebuild a generator from an exported checkpoint.
Generator generator_from_checkpoint(const Checkpoint &ckpt, const corpus::LanguageSpec &spec,
                                    const GanConfig &config);

}  // namespace sembridge::bridge
