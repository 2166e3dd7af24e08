#pragma once

#include <string>
#include <utility>
#include <vector>

#include "moeflow/experts.hpp"
#include "moeflow/flow.hpp"
#include "moeflow/graph.hpp"
#include "moeflow/ingest.hpp"
#include "moeflow/memory.hpp"
#include "moeflow/rnn.hpp"

namespace moeflow {

struct ModelConfig {
  int entities = 0;  // K, fixed by the data
  int window = 60;   // T
  int hidden_dim = 32;
  int graph_embed_dim = 16;
  int experts = 3;  // L, one expert per GNN layer
  CellKind cell = CellKind::Gru;
  int mem_slots = 4;
  int mem_dim = 32;
  int flow_blocks = 1;
  int flow_hidden = 64;
  double scale_clamp = 5.0;
  bool moe_enabled = true;
  bool mar_enabled = true;

  int ffn_dim() const { return 4 * hidden_dim; }
  int cond_dim() const { return window * hidden_dim; }
};

// The full detector: RNN embedding, learned graph, GNN stack, per-layer
// experts, memory-augmented router, and the conditional coupling flow over
// each entity's window row.
struct Model {
  ModelConfig cfg;
  RnnParams rnn;
  GraphAttnParams graph_attn;
  std::vector<GnnLayerParams> gnn;
  std::vector<ExpertParams> experts;
  RouterParams router;
  FlowParams flow;

  static Model init(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.entities < 1 || cfg.window < 1 || cfg.experts < 1)
      raise(ErrorKind::Config, "model needs entities >= 1, window >= 1, experts >= 1");
    Model m;
    m.cfg = cfg;
    Rng rng(module_seed(seed, "model.init"));
    m.rnn = RnnParams::init(cfg.cell, cfg.hidden_dim, rng);
    m.graph_attn = GraphAttnParams::init(cfg.window, cfg.graph_embed_dim, rng);
    for (int l = 0; l < cfg.experts; ++l)
      m.gnn.push_back(GnnLayerParams::init(cfg.hidden_dim, rng));
    for (int l = 0; l < cfg.experts; ++l)
      m.experts.push_back(ExpertParams::init(cfg.hidden_dim, cfg.ffn_dim(), rng));
    m.router = RouterParams::init(cfg.mem_slots, cfg.mem_dim, cfg.hidden_dim,
                                  cfg.experts, rng);
    m.flow = FlowParams::init(cfg.window, cfg.cond_dim(), cfg.flow_hidden,
                              cfg.flow_blocks, rng);
    m.flow.scale_clamp = cfg.scale_clamp;
    return m;
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto append = [&out](std::vector<std::pair<std::string, Tensor>> v) {
      for (auto& p : v) out.push_back(std::move(p));
    };
    append(rnn.named_params("rnn"));
    append(graph_attn.named_params("graph"));
    for (std::size_t l = 0; l < gnn.size(); ++l)
      append(gnn[l].named_params("gnn.l" + std::to_string(l + 1)));
    for (std::size_t l = 0; l < experts.size(); ++l)
      append(experts[l].named_params("expert.l" + std::to_string(l + 1)));
    append(router.named_params("router"));
    append(flow.named_params("flow"));
    return out;
  }

  struct Output {
    Tensor adjacency;   // (B, K, K)
    Tensor embedding;   // (B, K, T, d)
    Tensor routes;      // (B, L)
    Tensor condition;   // (B, K, T, d)
    Tensor entity_nll;  // (B*K,)
    Tensor window_nll;  // (B,)
    Tensor loss;        // scalar, mean NLL over windows and entities
  };

  // windows: (B, K, T). The memory state advances once per window, in order;
  // with MAR disabled the routes are exactly uniform, with MoE disabled the
  // condition is the last expert's output alone.
  Output forward(const Tensor& windows, MemoryState& memory) const {
    if (windows.rank() != 3 || windows.dim(1) != cfg.entities ||
        windows.dim(2) != cfg.window)
      detail::shape_error("model-forward", windows.shape());
    const int b = windows.dim(0);
    const int L = cfg.experts;

    Output out;
    out.embedding = encode_windows(windows, rnn);
    out.adjacency = learn_graph_batch(windows, graph_attn);
    std::vector<Tensor> stack = run_stack(out.adjacency, out.embedding, gnn);

    if (!cfg.moe_enabled) {
      // baseline: condition from the deepest layer only
      ExpertOutput last = expert_forward(out.embedding, stack.back(), experts.back());
      out.condition = last.aligned;
      Tensor onehot = Tensor::zeros({b, L});
      for (int i = 0; i < b; ++i)
        onehot.values_mut()[static_cast<std::size_t>(i * L + L - 1)] = 1.0;
      out.routes = onehot;
    } else {
      std::vector<Tensor> attended, aligned;
      attended.reserve(static_cast<std::size_t>(L));
      aligned.reserve(static_cast<std::size_t>(L));
      for (int l = 0; l < L; ++l) {
        ExpertOutput e = expert_forward(out.embedding, stack[static_cast<std::size_t>(l)],
                                        experts[static_cast<std::size_t>(l)]);
        attended.push_back(e.attended);
        aligned.push_back(e.aligned);
      }
      if (!cfg.mar_enabled) {
        out.routes = Tensor::full({b, L}, 1.0 / static_cast<double>(L));
      } else {
        Tensor hierarchy = collect_hierarchy(attended);  // (L, B, K, T, d)
        std::vector<Tensor> route_rows;
        route_rows.reserve(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i) {
          Tensor slice_i = reshape(slice(hierarchy, 1, i, 1),
                                   {L, cfg.entities, cfg.window, cfg.hidden_dim});
          RouterStep step = router_step(memory, slice_i, router);
          memory = std::move(step.state);
          route_rows.push_back(reshape(step.routes, {1, L}));
        }
        out.routes = concat(route_rows, 0);
      }
      out.condition = mix_batch(out.routes, aligned);
    }

    Tensor x_rows = reshape(windows, {b * cfg.entities, cfg.window});
    Tensor cond_rows = reshape(out.condition, {b * cfg.entities, cfg.cond_dim()});
    FlowForward ff = flow_forward(x_rows, cond_rows, flow);
    out.entity_nll = nll_rows(ff, cfg.window);
    out.window_nll = reduce_mean(reshape(out.entity_nll, {b, cfg.entities}), 1);
    out.loss = mean_all(out.entity_nll);
    return out;
  }
};

// Detached copy: same values, no gradient participation. Used to truncate
// the memory recurrence at optimizer-step boundaries.
inline Tensor detached(const Tensor& t) {
  Tensor c = t.clone();
  c.set_requires_grad(false);
  return c;
}

struct ScoreResult {
  std::vector<double> scores;       // per window, higher = more anomalous
  std::vector<double> routes;      // (count x L) row-major
  std::vector<double> adjacency;   // (count x K x K) row-major
};

// Tape-free scoring in temporal order; the memory keeps advancing across the
// scored windows.
inline ScoreResult score_windows(const Model& model, const WindowBatch& batch,
                                 MemoryState& memory, int chunk = 64) {
  ScoreResult result;
  const int k = static_cast<int>(batch.entities);
  const int t_len = batch.window_size;
  const int L = model.cfg.experts;
  result.scores.reserve(batch.count);
  result.routes.reserve(batch.count * static_cast<std::size_t>(L));
  result.adjacency.reserve(batch.count * static_cast<std::size_t>(k * k));
  for (std::size_t begin = 0; begin < batch.count;
       begin += static_cast<std::size_t>(chunk)) {
    const std::size_t n = std::min(static_cast<std::size_t>(chunk),
                                   batch.count - begin);
    const std::size_t width = static_cast<std::size_t>(k * t_len);
    std::vector<double> values(batch.windows.begin() +
                                   static_cast<std::ptrdiff_t>(begin * width),
                               batch.windows.begin() +
                                   static_cast<std::ptrdiff_t>((begin + n) * width));
    Tensor windows = Tensor::from({static_cast<int>(n), k, t_len}, std::move(values));
    Model::Output out = model.forward(windows, memory);
    memory.m = detached(memory.m);
    auto nll = out.window_nll.values();
    result.scores.insert(result.scores.end(), nll.begin(), nll.end());
    auto r = out.routes.values();
    result.routes.insert(result.routes.end(), r.begin(), r.end());
    auto a = out.adjacency.values();
    result.adjacency.insert(result.adjacency.end(), a.begin(), a.end());
  }
  return result;
}

}  // namespace moeflow
