#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "votebody/graph.hpp"
#include "votebody/losses.hpp"
#include "votebody/optimizer.hpp"
#include "votebody/pipeline.hpp"
#include "votebody/rng.hpp"
#include "votebody/synth_data.hpp"
#include "votebody/tensor.hpp"

namespace votebody {

// Central-difference verification of the reverse-mode gradients, always in
// double. Each probed coordinate retries with a shrinking step: a genuine
// gradient bug keeps its error as the step shrinks, while quadrature error
// from crossing a relu/max kink heals, so the minimum over steps is compared.

using GradBuilder = std::function<Graph<double>::Id(Graph<double>&, const ParamStore<double>&)>;

struct FdOutcome {
  double max_rel = 0.0;
  std::string worst;
};

namespace detail {

inline double builder_value(const ParamStore<double>& params, const GradBuilder& build) {
  Graph<double> g;
  return g.value(build(g, params)).data[0];
}

}  // namespace detail

inline FdOutcome fd_max_rel(const ParamStore<double>& params, const GradBuilder& build, double h = 1e-4,
                            int coords_per_param = -1, uint64_t seed = 0x5eed) {
  Graph<double> g;
  const auto loss = build(g, params);
  g.backward(loss);
  const auto grads = g.param_grads();

  FdOutcome out;
  ParamStore<double> probe = params;
  Rng rng(seed);
  for (const auto& name : params.names()) {
    Tensor<double>& t = probe.at(name);
    const int64_t numel = t.numel();
    const int64_t coords = coords_per_param < 0 ? numel : std::min<int64_t>(coords_per_param, numel);
    for (int64_t c = 0; c < coords; ++c) {
      const int64_t i = coords_per_param < 0 ? c : static_cast<int64_t>(rng.uniform() * numel) % numel;
      const auto git = grads.find(name);
      const double an = git == grads.end() ? 0.0 : static_cast<double>(git->second->data[static_cast<size_t>(i)]);
      const double orig = t.data[static_cast<size_t>(i)];
      double rel = std::numeric_limits<double>::infinity();
      double fd = 0.0;
      for (double step = h; rel > 1e-4 && step > h * 1e-3; step /= 10.0) {
        t.data[static_cast<size_t>(i)] = orig + step;
        const double lp = detail::builder_value(probe, build);
        t.data[static_cast<size_t>(i)] = orig - step;
        const double lm = detail::builder_value(probe, build);
        const double cand = (lp - lm) / (2.0 * step);
        const double cand_rel = std::fabs(an - cand) / std::max({std::fabs(an), std::fabs(cand), 1e-4});
        if (cand_rel < rel) {
          rel = cand_rel;
          fd = cand;
        }
      }
      t.data[static_cast<size_t>(i)] = orig;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(an) +
                    " fd=" + std::to_string(fd);
      }
    }
  }
  return out;
}

struct GradSuiteRow {
  std::string name;
  double max_rel = 0.0;
  std::string worst;
};

struct GradSuiteReport {
  std::vector<GradSuiteRow> rows;
  double max_rel = 0.0;

  bool pass(double tol = 1e-3) const { return max_rel < tol; }
};

namespace detail {

inline Tensor<double> suite_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<double> t(shape);
  for (auto& v : t.data) v = lo + (hi - lo) * rng.uniform();
  return t;
}

}  // namespace detail

// one finite-difference row per differentiable operation, then the assembled
// training loss on a toy body; every gradient path in the network is covered
inline GradSuiteReport run_gradient_suite(int64_t toy_joints = 16, int64_t toy_vertices = 400,
                                          int64_t cloud_points = 512, uint64_t seed = 2024,
                                          std::ostream* log = nullptr) {
  GradSuiteReport report;
  Rng rng(seed);
  auto signed_tensor = [&rng](Shape s, double mag) {
    Tensor<double> t(s);
    for (auto& v : t.data) {
      const double u = 2.0 * rng.uniform() - 1.0;
      v = mag * (u + (u >= 0.0 ? 0.25 : -0.25));  // keep coordinates away from 0
    }
    return t;
  };
  auto simplex_rows = [&rng](int64_t n, int64_t k) {
    Tensor<double> t({n, k});
    for (int64_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (int64_t j = 0; j < k; ++j) {
        t.at(i, j) = 0.1 + rng.uniform();
        sum += t.at(i, j);
      }
      for (int64_t j = 0; j < k; ++j) t.at(i, j) /= sum;
    }
    return t;
  };

  auto add_row = [&](const std::string& name, const ParamStore<double>& params, const GradBuilder& build,
                     double h = 1e-4, int coords = -1) {
    const auto r = fd_max_rel(params, build, h, coords, seed ^ std::hash<std::string>{}(name));
    report.rows.push_back({name, r.max_rel, r.worst});
    report.max_rel = std::max(report.max_rel, r.max_rel);
    if (log) {
      (*log) << "gradcheck op=" << name << " max_rel=" << r.max_rel;
      if (r.max_rel > 1e-3) (*log) << " worst=" << r.worst;
      (*log) << "\n";
    }
  };
  // contracts each op's output against a fixed random tensor so every output
  // coordinate feeds the scalar with a distinct weight
  auto contracted = [&](Tensor<double> weights, const std::function<Graph<double>::Id(Graph<double>&, const ParamStore<double>&)>& op) {
    return [weights, op](Graph<double>& g, const ParamStore<double>& p) {
      return g.reduce_sum(g.mul(op(g, p), g.constant(weights)));
    };
  };

  {
    ParamStore<double> p;
    p.add("a", signed_tensor({3, 4}, 1.0));
    p.add("b", signed_tensor({4, 5}, 1.0));
    add_row("matmul", p, contracted(detail::suite_tensor(rng, {3, 5}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.matmul(g.param("a", p.at("a")), g.param("b", p.at("b")));
            }));
  }
  {
    ParamStore<double> p;
    p.add("a", signed_tensor({3, 4}, 1.0));
    p.add("b", signed_tensor({3, 4}, 1.0));
    const auto w = detail::suite_tensor(rng, {3, 4}, -1.0, 1.0);
    add_row("add", p, contracted(w, [](Graph<double>& g, const ParamStore<double>& p) {
              return g.add(g.param("a", p.at("a")), g.param("b", p.at("b")));
            }));
    add_row("sub", p, contracted(w, [](Graph<double>& g, const ParamStore<double>& p) {
              return g.sub(g.param("a", p.at("a")), g.param("b", p.at("b")));
            }));
    add_row("mul", p, contracted(w, [](Graph<double>& g, const ParamStore<double>& p) {
              return g.mul(g.param("a", p.at("a")), g.param("b", p.at("b")));
            }));
  }
  {
    ParamStore<double> p;
    p.add("a", signed_tensor({3, 4}, 1.0));
    p.add("b", detail::suite_tensor(rng, {3, 4}, 0.5, 2.0));
    add_row("div", p, contracted(detail::suite_tensor(rng, {3, 4}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.div(g.param("a", p.at("a")), g.param("b", p.at("b")));
            }));
  }
  {
    ParamStore<double> p;
    p.add("a", signed_tensor({4, 5}, 1.0));
    p.add("b", signed_tensor({5}, 1.0));
    add_row("bias-add", p, contracted(detail::suite_tensor(rng, {4, 5}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.bias_add(g.param("a", p.at("a")), g.param("b", p.at("b")));
            }));
  }
  {
    ParamStore<double> p;
    p.add("a", signed_tensor({2, 3}, 1.0));
    p.add("b", signed_tensor({4, 3}, 1.0));
    add_row("concat-rows", p, contracted(detail::suite_tensor(rng, {6, 3}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.concat({g.param("a", p.at("a")), g.param("b", p.at("b"))}, 0);
            }));
  }
  {
    ParamStore<double> p;
    p.add("a", signed_tensor({3, 2}, 1.0));
    p.add("b", signed_tensor({3, 4}, 1.0));
    add_row("concat-cols", p, contracted(detail::suite_tensor(rng, {3, 6}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.concat({g.param("a", p.at("a")), g.param("b", p.at("b"))}, 1);
            }));
  }
  {
    ParamStore<double> p;
    p.add("a", signed_tensor({4, 6}, 1.0));
    add_row("relu", p, contracted(detail::suite_tensor(rng, {4, 6}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.relu(g.param("a", p.at("a")));
            }));
    add_row("softmax", p, contracted(detail::suite_tensor(rng, {4, 6}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.softmax(g.param("a", p.at("a")), 1);
            }));
    add_row("reduce-max-axis0", p, contracted(detail::suite_tensor(rng, {6}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.reduce_max(g.param("a", p.at("a")), 0);
            }));
    add_row("reduce-mean", p, [](Graph<double>& g, const ParamStore<double>& p) {
      return g.reduce_mean(g.param("a", p.at("a")));
    });
    add_row("reduce-sum", p, [](Graph<double>& g, const ParamStore<double>& p) {
      return g.reduce_sum(g.param("a", p.at("a")));
    });
    add_row("l2-norm", p, [](Graph<double>& g, const ParamStore<double>& p) {
      return g.l2_norm(g.param("a", p.at("a")));
    });
    add_row("l1-norm", p, [](Graph<double>& g, const ParamStore<double>& p) {
      return g.l1_norm(g.param("a", p.at("a")));
    });
    add_row("frobenius-norm", p, [](Graph<double>& g, const ParamStore<double>& p) {
      return g.frobenius_norm(g.param("a", p.at("a")));
    });
    add_row("smooth-l1", p, [](Graph<double>& g, const ParamStore<double>& p) {
      return g.reduce_sum(g.smooth_l1(g.param("a", p.at("a"))));
    });
    add_row("scale", p, [](Graph<double>& g, const ParamStore<double>& p) {
      return g.reduce_sum(g.scale(g.param("a", p.at("a")), -1.7));
    });
    add_row("reshape", p, contracted(detail::suite_tensor(rng, {2, 12}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.reshape(g.param("a", p.at("a")), {2, 12});
            }));
    add_row("transpose", p, contracted(detail::suite_tensor(rng, {6, 4}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.transpose(g.param("a", p.at("a")));
            }));
  }
  {
    ParamStore<double> p;
    p.add("a", signed_tensor({3, 4, 5}, 1.0));
    add_row("reduce-max-axis1", p, contracted(detail::suite_tensor(rng, {3, 5}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.reduce_max(g.param("a", p.at("a")), 1);
            }));
  }
  {
    ParamStore<double> p;
    p.add("a", detail::suite_tensor(rng, {5, 3}, 0.2, 1.5));
    add_row("log", p, contracted(detail::suite_tensor(rng, {5, 3}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.log_clamped(g.param("a", p.at("a")));
            }));
  }
  {
    ParamStore<double> p;
    p.add("a", signed_tensor({6, 4}, 1.0));
    add_row("gather-rows", p, contracted(detail::suite_tensor(rng, {5, 4}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.gather_rows(g.param("a", p.at("a")), {0, 2, 2, 5, 1});
            }));
  }
  {
    ParamStore<double> p;
    p.add("v", signed_tensor({8, 3}, 1.0));
    p.add("r", detail::suite_tensor(rng, {8}, 0.3, 1.4));
    add_row("scale-rows", p, contracted(detail::suite_tensor(rng, {8, 3}, -1.0, 1.0), [](Graph<double>& g, const ParamStore<double>& p) {
              return g.scale_rows(g.param("v", p.at("v")), g.param("r", p.at("r")));
            }));
  }
  {
    ParamStore<double> p;
    p.add("v", signed_tensor({10, 3}, 1.0));
    p.add("w", simplex_rows(10, 4));
    const auto c = detail::suite_tensor(rng, {4, 3}, -1.0, 1.0);
    add_row("scatter-weighted-sum", p, contracted(c, [](Graph<double>& g, const ParamStore<double>& p) {
              return g.scatter_weighted_sum(g.param("v", p.at("v")), g.param("w", p.at("w")));
            }));
    add_row("scatter-weighted-mean", p, contracted(c, [](Graph<double>& g, const ParamStore<double>& p) {
              return g.scatter_weighted_mean(g.param("v", p.at("v")), g.param("w", p.at("w")));
            }));
  }
  {
    ParamStore<double> p;
    p.add("pts", detail::suite_tensor(rng, {12, 3}, -1.0, 1.0));
    p.add("verts", detail::suite_tensor(rng, {9, 3}, -1.0, 1.0));
    add_row("chamfer", p, [](Graph<double>& g, const ParamStore<double>& p) {
      return g.chamfer(g.param("pts", p.at("pts")), g.param("verts", p.at("verts")));
    });
  }

  // assembled network + loss on the toy body, two probes per parameter tensor
  {
    const BodyModel<double> body = make_toy_model<double>(toy_joints, toy_vertices, 7);
    GenerateOptions opt;
    opt.num_samples = 1;
    opt.points_per_sample = cloud_points;
    opt.noise_sigma = 0.0;
    opt.seed = seed;
    const TrainingSample sample = generate_sample(body, opt, 0);
    Rng prng(seed + 1);
    const ParamStore<double> params = register_pipeline_params<double>(prng, body.num_joints());
    const LossWeights w;
    const auto build = [&body, &sample, &w](Graph<double>& g, const ParamStore<double>& p) {
      const auto f = pipeline_forward(g, p, body, sample.points.cast<double>());
      return pipeline_loss(g, f, sample, w).total;
    };
    add_row("pipeline-loss", params, build, 1e-4, 2);
  }
  return report;
}

}  // namespace votebody
