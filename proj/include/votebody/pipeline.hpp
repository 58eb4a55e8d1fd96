#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "votebody/backbone.hpp"
#include "votebody/body_model.hpp"
#include "votebody/checkpoint.hpp"
#include "votebody/graph.hpp"
#include "votebody/losses.hpp"
#include "votebody/metrics.hpp"
#include "votebody/optimizer.hpp"
#include "votebody/regressors.hpp"
#include "votebody/rng.hpp"
#include "votebody/rotation.hpp"
#include "votebody/synth_data.hpp"
#include "votebody/tensor.hpp"
#include "votebody/vote_cluster.hpp"

namespace votebody {

// Run settings shared by the train/eval/infer entry points. Body geometry
// comes either from a deterministic toy body (asset path empty) or a saved
// asset file.
struct RunConfig {
  uint64_t seed = 1;
  std::string train_shard;
  std::string eval_shard;
  std::string checkpoint;
  int64_t points = 512;
  double noise_sigma = 0.0;  // meters
  LossWeights weights;
  double learning_rate = 1e-4;
  int64_t steps = 5000;
  int64_t checkpoint_every = 500;
  int64_t grad_accum = 1;  // samples folded into one optimizer step
  std::string body_asset;
  int64_t toy_joints = 16;
  int64_t toy_vertices = 400;
  uint64_t toy_seed = 7;
  bool param_supervision = true;  // hard gt pose/shape available (sets l21)

  void validate() const {
    if (points < 128) throw std::invalid_argument("config: points must be >= 128");
    if (steps < 0 || checkpoint_every <= 0 || grad_accum <= 0)
      throw std::invalid_argument("config: steps/checkpoint_every/grad_accum out of range");
    if (learning_rate <= 0.0) throw std::invalid_argument("config: learning rate must be positive");
    if (noise_sigma < 0.0) throw std::invalid_argument("config: noise sigma must be nonnegative");
    std::vector<std::string> paths;
    for (const auto& p : {train_shard, eval_shard, checkpoint, body_asset})
      if (!p.empty()) paths.push_back(p);
    for (size_t i = 0; i < paths.size(); ++i)
      for (size_t j = i + 1; j < paths.size(); ++j)
        if (paths[i] == paths[j]) throw std::invalid_argument("config: paths must be distinct: " + paths[i]);
  }

  LossWeights effective_weights() const {
    LossWeights w = weights;
    w.l21 = param_supervision ? w.l21 : 0.0;
    return w;
  }
};

inline int env_thread_count() {
  if (const char* v = std::getenv("VOTEBODY_THREADS")) {
    const int n = std::atoi(v);
    if (n >= 1) return n;
  }
  return 1;
}

template <typename S>
BodyModel<S> body_from_config(const RunConfig& cfg) {
  if (!cfg.body_asset.empty()) return load_body_asset<S>(cfg.body_asset);
  return make_toy_model<S>(cfg.toy_joints, cfg.toy_vertices, cfg.toy_seed);
}

template <typename S>
ParamStore<S> register_pipeline_params(Rng& rng, int64_t num_joints) {
  ParamStore<S> store;
  register_backbone_params(store, rng);
  register_vote_params(store, rng, num_joints);
  register_completion_params(store, rng, num_joints);
  register_global_params(store, rng);
  register_local_params(store, rng);
  return store;
}

template <typename S>
struct PipelineNodes {
  typename Graph<S>::Id points;  // [N, 3] input constant
  BackboneOut<S> backbone;
  VoteNodes<S> votes;
  ClusterNodes<S> cluster;
  CompletionNodes<S> completion;
  GlobalNodes<S> global;
  typename Graph<S>::Id locals;       // [(K-1), 9]
  typename Graph<S>::Id rotations;    // [K, 9] root row first
  typename Graph<S>::Id translation;  // [1, 3] completed root - rest root
  LbsNodes<S> lbs;                    // posed + translated mesh and joints
};

// full network: hierarchical features -> per-point votes -> visibility-masked
// clusters -> joint completion -> shape/rotation regression -> skinned mesh.
// The world translation is read off the completed root joint against the
// shaped rest skeleton, so the prediction lives in the input's centered frame.
template <typename S>
PipelineNodes<S> pipeline_forward(Graph<S>& g, const ParamStore<S>& store, const BodyModel<S>& body,
                                  const Tensor<S>& points) {
  PipelineNodes<S> f;
  f.points = g.constant(points);
  f.backbone = backbone_forward(g, store, points);
  f.votes = vote_forward(g, store, f.backbone.features);
  f.cluster = cluster_votes(g, f.points, f.votes);
  f.completion = complete_joints(g, store, f.cluster);
  f.global = global_regress(g, store, f.backbone.global, f.completion.features);
  f.locals = local_regress(g, store, f.completion.positions, f.completion.features, body.parents);
  f.rotations = g.concat({f.global.root, f.locals}, 0);

  const auto rest = shape_blend_graph(g, body, f.global.betas);
  f.translation = g.sub(g.gather_rows(f.completion.positions, {0}), g.gather_rows(rest.joints, {0}));
  f.lbs = lbs_graph(g, body, rest, f.global.root, f.locals, f.translation);
  return f;
}

template <typename S>
struct PipelineLossNodes {
  VoteGenNodes<S> vote_gen;
  ParamRegNodes<S> param_reg;
  ModelFitNodes<S> model_fit;
  typename Graph<S>::Id total;
};

template <typename S>
PipelineLossNodes<S> pipeline_loss(Graph<S>& g, const PipelineNodes<S>& f, const TrainingSample& sample,
                                   const LossWeights& w) {
  PipelineLossNodes<S> out;
  out.vote_gen = vote_gen_loss(g, f.votes.seg, sample.gt_labels, f.votes.offsets,
                               sample.gt_offsets.template cast<S>(), w);
  const BodyParams<S> gt = {sample.gt_params.betas.template cast<S>(),
                            sample.gt_params.root_rotation.template cast<S>(),
                            sample.gt_params.local_rotations.template cast<S>(),
                            sample.gt_params.translation.template cast<S>()};
  out.param_reg = param_reg_loss(g, f.global.betas, gt.betas, f.rotations, stack_rotations(gt), w);
  out.model_fit =
      model_fit_loss(g, f.lbs.vertices, sample.gt_vertices.template cast<S>(),
                     sample.points.template cast<S>(), f.cluster.positions, f.completion.positions,
                     sample.gt_joints.template cast<S>(), f.cluster.visible, w);
  out.total = total_loss(g, out.vote_gen, out.param_reg, out.model_fit, w);
  return out;
}

// concrete body parameters for mesh generation: rotations projected onto the
// rotation manifold, translation read from the graph
template <typename S>
BodyParams<S> extract_body_params(Graph<S>& g, const PipelineNodes<S>& f) {
  const Tensor<S>& betas_row = g.value(f.global.betas);
  const Tensor<S>& rot = g.value(f.rotations);
  const Tensor<S>& trans = g.value(f.translation);
  const int64_t K = rot.shape[0];

  BodyParams<S> p;
  p.betas = Tensor<S>({kShapeDims});
  for (int64_t i = 0; i < kShapeDims; ++i) p.betas.at(i) = betas_row.at(0, i);
  p.translation = Tensor<S>({3});
  for (int64_t c = 0; c < 3; ++c) p.translation.at(c) = trans.at(0, c);

  auto project_row = [&rot](int64_t k) {
    Mat3 raw;
    for (int i = 0; i < 9; ++i) raw[static_cast<size_t>(i)] = static_cast<double>(rot.at(k, i));
    return project_rotation(raw).r;
  };
  p.root_rotation = Tensor<S>({3, 3});
  const Mat3 root = project_row(0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) p.root_rotation.at(i, j) = static_cast<S>(root[static_cast<size_t>(3 * i + j)]);
  p.local_rotations = Tensor<S>({K - 1, 3, 3});
  for (int64_t k = 1; k < K; ++k) {
    const Mat3 r = project_row(k);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        p.local_rotations.at(k - 1, i, j) = static_cast<S>(r[static_cast<size_t>(3 * i + j)]);
  }
  return p;
}

// ---- training ---------------------------------------------------------------

struct TrainResult {
  int64_t steps_run = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  bool aborted_non_finite = false;
  int64_t last_checkpoint_step = -1;
};

namespace detail {

template <typename S>
void accumulate_grads(const Graph<S>& g, const std::unordered_map<std::string, const Tensor<S>*>& grads,
                      std::unordered_map<std::string, Tensor<S>>& acc) {
  (void)g;
  for (const auto& [name, t] : grads) {
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, *t);
    } else {
      for (size_t i = 0; i < it->second.data.size(); ++i) it->second.data[i] += t->data[i];
    }
  }
}

}  // namespace detail

// single-threaded over steps; one sample per forward, round-robin over the
// shard, optional gradient accumulation before each optimizer step. Logs one
// line per step with every loss component; a non-finite total aborts with the
// last on-disk checkpoint intact.
template <typename S = float>
TrainResult train_run(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (cfg.train_shard.empty()) throw std::invalid_argument("config: train shard path required");
  if (cfg.checkpoint.empty()) throw std::invalid_argument("config: checkpoint path required");
  const BodyModel<S> body = body_from_config<S>(cfg);
  const std::vector<TrainingSample> samples = load_shard(cfg.train_shard);
  if (samples.empty()) throw std::runtime_error("train shard is empty");
  for (const auto& s : samples)
    if (s.gt_joints.shape[0] != body.num_joints() || s.gt_vertices.shape[0] != body.num_vertices())
      throw std::runtime_error("shard geometry does not match the configured body (joints/vertices)");

  const LossWeights w = cfg.effective_weights();
  log << "config lambda1=" << w.l1 << " lambda2=" << w.l2 << " lambda3=" << w.l3 << " lambda11=" << w.l11
      << " lambda12=" << w.l12 << " lambda21=" << w.l21 << " lambda22=" << w.l22 << " lambda31=" << w.l31
      << " lambda32=" << w.l32 << " lambda33=" << w.l33 << " lr=" << cfg.learning_rate
      << " steps=" << cfg.steps << " seed=" << cfg.seed << "\n";

  Rng rng(cfg.seed);
  ParamStore<S> params = register_pipeline_params<S>(rng, body.num_joints());
  Adam<S> optim(cfg.learning_rate);

  TrainResult res;
  int64_t sample_cursor = 0;
  for (int64_t step = 0; step < cfg.steps; ++step) {
    std::unordered_map<std::string, Tensor<S>> acc;
    double total = 0.0, seg = 0.0, vote_reg = 0.0, gt_l1 = 0.0, orth = 0.0, vertex = 0.0, chamfer = 0.0,
           skeleton = 0.0;
    for (int64_t a = 0; a < cfg.grad_accum; ++a) {
      const TrainingSample& sample = samples[static_cast<size_t>(sample_cursor)];
      sample_cursor = (sample_cursor + 1) % static_cast<int64_t>(samples.size());
      Graph<S> g;
      const auto f = pipeline_forward(g, params, body, sample.points.template cast<S>());
      const auto loss = pipeline_loss(g, f, sample, w);
      const double v = static_cast<double>(g.value(loss.total).data[0]);
      total += v;
      seg += static_cast<double>(g.value(loss.vote_gen.seg).data[0]);
      vote_reg += static_cast<double>(g.value(loss.vote_gen.vote_reg).data[0]);
      gt_l1 += static_cast<double>(g.value(loss.param_reg.gt_l1).data[0]);
      orth += static_cast<double>(g.value(loss.param_reg.orth).data[0]);
      vertex += static_cast<double>(g.value(loss.model_fit.vertex).data[0]);
      chamfer += static_cast<double>(g.value(loss.model_fit.chamfer).data[0]);
      skeleton += static_cast<double>(g.value(loss.model_fit.skeleton).data[0]);
      if (!std::isfinite(v)) {
        log << "step=" << step << " total=" << v << " abort=non-finite-loss last_checkpoint_step="
            << res.last_checkpoint_step << "\n";
        res.aborted_non_finite = true;
        res.final_loss = v;
        return res;
      }
      g.backward(loss.total);
      detail::accumulate_grads(g, g.param_grads(), acc);
    }
    const double inv = 1.0 / static_cast<double>(cfg.grad_accum);
    std::unordered_map<std::string, const Tensor<S>*> grad_view;
    for (auto& [name, t] : acc) {
      for (auto& v : t.data) v = static_cast<S>(static_cast<double>(v) * inv);
      grad_view[name] = &t;
    }
    optim.step(params, grad_view);

    total *= inv;
    if (step == 0) res.first_loss = total;
    res.final_loss = total;
    res.steps_run = step + 1;
    log << "step=" << step << " total=" << total << " seg=" << seg * inv << " vote_reg=" << vote_reg * inv
        << " param_l1=" << gt_l1 * inv << " orth=" << orth * inv << " vertex=" << vertex * inv
        << " chamfer=" << chamfer * inv << " skeleton=" << skeleton * inv << "\n";

    if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps) {
      save_checkpoint(cfg.checkpoint, params, &optim);
      res.last_checkpoint_step = step;
    }
  }
  if (res.steps_run > 0 && res.last_checkpoint_step != res.steps_run - 1) {
    save_checkpoint(cfg.checkpoint, params, &optim);
    res.last_checkpoint_step = res.steps_run - 1;
  }
  return res;
}

// ---- evaluation ---------------------------------------------------------------

template <typename S>
struct SamplePrediction {
  BodyParams<S> params;           // projected rotations, predicted translation
  Posed<S> posed;                 // mesh + joints in the centered input frame
  std::vector<int64_t> labels;    // argmax part label per point
  Tensor<S> voted_joints;         // [N, 3] points + predicted offsets
  std::vector<bool> visible;      // per-joint cluster visibility
  Tensor<S> completed;            // [K, 3] completed joint positions
};

template <typename S>
SamplePrediction<S> predict_sample(const ParamStore<S>& params, const BodyModel<S>& body,
                                   const Tensor<S>& points) {
  Graph<S> g;
  const auto f = pipeline_forward(g, params, body, points);
  SamplePrediction<S> out;
  out.params = extract_body_params(g, f);
  out.posed = lbs_forward(body, out.params);
  const Tensor<S>& seg = g.value(f.votes.seg);
  out.labels.resize(static_cast<size_t>(seg.shape[0]));
  for (int64_t i = 0; i < seg.shape[0]; ++i) {
    int64_t best = 0;
    for (int64_t k = 1; k < seg.shape[1]; ++k)
      if (seg.at(i, k) > seg.at(i, best)) best = k;
    out.labels[static_cast<size_t>(i)] = best;
  }
  const Tensor<S>& off = g.value(f.votes.offsets);
  out.voted_joints = Tensor<S>(points.shape);
  for (int64_t i = 0; i < points.shape[0]; ++i)
    for (int64_t c = 0; c < 3; ++c) out.voted_joints.at(i, c) = points.at(i, c) + off.at(i, c);
  out.visible = f.cluster.visible;
  out.completed = g.value(f.completion.positions);
  return out;
}

struct EvalResult {
  MetricReport mean;
  std::vector<MetricReport> per_sample;
  double seg_accuracy = 0.0;   // fraction of points labeled with their gt part
  double mean_orth_err = 0.0;  // pre-projection ||RR^T - I||_F averaged over joints
};

namespace detail {

template <typename S>
double raw_orthogonality_error(const Tensor<S>& rot) {
  double acc = 0.0;
  for (int64_t k = 0; k < rot.shape[0]; ++k) {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r[static_cast<size_t>(i)] = static_cast<double>(rot.at(k, i));
    acc += orthogonality_error(r);
  }
  return acc / static_cast<double>(rot.shape[0]);
}

}  // namespace detail

// inference over a whole shard; per-sample work is pure and parallelized over
// a static partition, so the merged result is independent of thread count
template <typename S>
EvalResult evaluate_dataset(const ParamStore<S>& params, const BodyModel<S>& body,
                            const std::vector<TrainingSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const int64_t n = static_cast<int64_t>(samples.size());
  std::vector<MetricReport> reports(static_cast<size_t>(n));
  std::vector<double> seg_acc(static_cast<size_t>(n)), orth_err(static_cast<size_t>(n));

  auto run_range = [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const TrainingSample& sample = samples[static_cast<size_t>(i)];
      const Tensor<S> pts = sample.points.template cast<S>();
      Graph<S> g;
      const auto f = pipeline_forward(g, params, body, pts);
      const auto pred_params = extract_body_params(g, f);
      const Posed<S> posed = lbs_forward(body, pred_params);
      reports[static_cast<size_t>(i)] = compute_metrics(
          eval_subset_vertices(body, posed.vertices), eval_subset_vertices(body, sample.gt_vertices.template cast<S>()),
          posed.joints, sample.gt_joints.template cast<S>(), pts);
      const Tensor<S>& seg = g.value(f.votes.seg);
      int64_t hits = 0;
      for (int64_t p = 0; p < seg.shape[0]; ++p) {
        int64_t best = 0;
        for (int64_t k = 1; k < seg.shape[1]; ++k)
          if (seg.at(p, k) > seg.at(p, best)) best = k;
        if (best == sample.gt_labels[static_cast<size_t>(p)]) ++hits;
      }
      seg_acc[static_cast<size_t>(i)] = static_cast<double>(hits) / static_cast<double>(seg.shape[0]);
      orth_err[static_cast<size_t>(i)] = detail::raw_orthogonality_error(g.value(f.rotations));
    }
  };

  const int threads = std::min<int>(env_thread_count(), static_cast<int>(n));
  if (threads <= 1) {
    run_range(0, n);
  } else {
    std::vector<std::thread> pool;
    const int64_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const int64_t lo = t * chunk, hi = std::min<int64_t>(n, lo + chunk);
      if (lo < hi) pool.emplace_back(run_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  EvalResult out;
  out.per_sample = std::move(reports);
  for (int64_t i = 0; i < n; ++i) {
    out.mean.pve_mm += out.per_sample[static_cast<size_t>(i)].pve_mm;
    out.mean.pve_max_mm += out.per_sample[static_cast<size_t>(i)].pve_max_mm;
    out.mean.mpjpe_mm += out.per_sample[static_cast<size_t>(i)].mpjpe_mm;
    out.mean.cd_mm += out.per_sample[static_cast<size_t>(i)].cd_mm;
    out.seg_accuracy += seg_acc[static_cast<size_t>(i)];
    out.mean_orth_err += orth_err[static_cast<size_t>(i)];
  }
  const double inv = 1.0 / static_cast<double>(n);
  out.mean.pve_mm *= inv;
  out.mean.pve_max_mm *= inv;
  out.mean.mpjpe_mm *= inv;
  out.mean.cd_mm *= inv;
  out.seg_accuracy *= inv;
  out.mean_orth_err *= inv;
  return out;
}

inline void emit_metrics(std::ostream& out, const std::string& prefix, const EvalResult& r) {
  out << prefix << "pve_mm=" << r.mean.pve_mm << " pve_max_mm=" << r.mean.pve_max_mm
      << " mpjpe_mm=" << r.mean.mpjpe_mm << " cd_mm=" << r.mean.cd_mm << " seg_acc=" << r.seg_accuracy
      << " orth_err=" << r.mean_orth_err << "\n";
}

// ---- inference ---------------------------------------------------------------

// center, resample to the configured size, predict, and return everything an
// exporter needs; the caller owns file output
template <typename S = float>
SamplePrediction<S> infer_cloud(const RunConfig& cfg, const ParamStore<S>& params, const BodyModel<S>& body,
                                const Tensor<float>& raw_points) {
  if (raw_points.rank() != 2 || raw_points.shape[1] != 3 || raw_points.shape[0] < 1)
    throw std::invalid_argument("infer: points must be N'x3");
  const int64_t n_in = raw_points.shape[0];
  double centroid[3] = {0.0, 0.0, 0.0};
  for (int64_t i = 0; i < n_in; ++i)
    for (int c = 0; c < 3; ++c) centroid[c] += static_cast<double>(raw_points.at(i, c));
  for (int c = 0; c < 3; ++c) centroid[c] /= static_cast<double>(n_in);

  Rng rng = Rng::fork(cfg.seed, 0x1f);
  const std::vector<int64_t> pick = sample_fixed_indices(n_in, cfg.points, rng);
  Tensor<S> pts({cfg.points, 3});
  for (int64_t i = 0; i < cfg.points; ++i)
    for (int c = 0; c < 3; ++c)
      pts.at(i, c) = static_cast<S>(static_cast<double>(raw_points.at(pick[static_cast<size_t>(i)], c)) -
                                    centroid[c]);
  return predict_sample(params, body, pts);
}

}  // namespace votebody
