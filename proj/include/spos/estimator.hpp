#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "spos/model.hpp"
#include "spos/rng.hpp"

namespace spos {

enum class EstimatorKind { Plain, SAGA, SVRG_I, SVRG_II, SVRGPlus };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Plain: return "plain";
    case EstimatorKind::SAGA: return "saga";
    case EstimatorKind::SVRG_I: return "svrg1";
    case EstimatorKind::SVRG_II: return "svrg2";
    case EstimatorKind::SVRGPlus: return "svrgplus";
  }
  return "?";
}

// B i.i.d. uniform indices from {0, ..., N-1}; duplicates allowed and counted
// with multiplicity in all estimator sums.
struct MinibatchDraw {
  std::vector<int32_t> indices;
  int size() const { return static_cast<int>(indices.size()); }
};

inline MinibatchDraw sample_minibatch(RngStream& stream, Eigen::Index n, int batch) {
  if (n < 1 || batch < 1) throw std::invalid_argument("sample_minibatch: need N >= 1, B >= 1");
  MinibatchDraw draw;
  draw.indices.resize(batch);
  for (int s = 0; s < batch; ++s)
    draw.indices[s] = static_cast<int32_t>(stream.uniform_int(static_cast<uint64_t>(n)));
  return draw;
}

struct EstimatorParams {
  EstimatorKind kind = EstimatorKind::Plain;
  int batch_size = 1;        // B
  int epoch_length = 1;      // tau, SVRG kinds
  int anchor_batch = 1;      // b, SVRG+
};

// Per-particle variance-reduction memory. SAGA keeps the M x N x d gradient
// table g_{k,j}^{(i)} with a running per-particle sum; SVRG kinds keep the
// anchors (theta~, G~); SVRG Option I additionally keeps the last tau
// position snapshots so the epoch boundary can rewind.
class EstimatorState {
 public:
  EstimatorState() = default;

  EstimatorKind kind() const { return params_.kind; }
  const EstimatorParams& params() const { return params_; }
  uint64_t eval_counter() const { return eval_counter_; }
  Eigen::Index particles() const { return m_; }

  const std::vector<Eigen::MatrixXd>& saga_table() const { return saga_table_; }
  const Eigen::MatrixXd& saga_sums() const { return saga_sums_; }
  const Eigen::MatrixXd& anchor_positions() const { return anchor_pos_; }
  const Eigen::MatrixXd& anchor_grads() const { return anchor_grad_; }
  const std::deque<Eigen::MatrixXd>& position_history() const { return history_; }

  // Diagnostic setters: install arbitrary memory contents while keeping the
  // cached running sums consistent.
  void set_saga_table(Eigen::Index i, const Eigen::MatrixXd& table) {
    if (params_.kind != EstimatorKind::SAGA) throw std::logic_error("set_saga_table: kind mismatch");
    if (table.rows() != saga_table_.at(i).rows() || table.cols() != saga_table_[i].cols())
      throw std::invalid_argument("set_saga_table: shape mismatch");
    saga_table_[i] = table;
    saga_sums_.row(i) = table.colwise().sum();
  }
  void set_anchor(Eigen::Index i, const Eigen::VectorXd& position, const Eigen::VectorXd& grad) {
    if (params_.kind != EstimatorKind::SVRG_I && params_.kind != EstimatorKind::SVRG_II &&
        params_.kind != EstimatorKind::SVRGPlus)
      throw std::logic_error("set_anchor: kind mismatch");
    anchor_pos_.row(i) = position;
    anchor_grad_.row(i) = grad;
  }

  friend EstimatorState init_estimator(const EstimatorParams&, const Model&,
                                       const Eigen::MatrixXd&);
  friend Eigen::VectorXd estimate(EstimatorState&, const Model&, const Eigen::VectorXd&,
                                  Eigen::Index, const MinibatchDraw&, Eigen::MatrixXd*);
  friend void post_step_update(EstimatorState&, const Model&, const Eigen::MatrixXd&,
                               const std::vector<Eigen::MatrixXd>&,
                               const std::vector<MinibatchDraw>&, int64_t, RngStream&,
                               Eigen::MatrixXd&);

 private:
  EstimatorParams params_;
  Eigen::Index m_ = 0;
  bool initialized_ = false;
  int64_t expected_step_ = 0;
  uint64_t eval_counter_ = 0;

  std::vector<Eigen::MatrixXd> saga_table_;  // M entries of N x d
  Eigen::MatrixXd saga_sums_;                // M x d

  Eigen::MatrixXd anchor_pos_;               // M x d
  Eigen::MatrixXd anchor_grad_;              // M x d
  std::deque<Eigen::MatrixXd> history_;      // SVRG_I: last tau snapshots
};

inline EstimatorState init_estimator(const EstimatorParams& params, const Model& model,
                                     const Eigen::MatrixXd& positions) {
  if (params.batch_size < 1) throw std::invalid_argument("init_estimator: B >= 1 required");
  const bool svrg = params.kind == EstimatorKind::SVRG_I || params.kind == EstimatorKind::SVRG_II ||
                    params.kind == EstimatorKind::SVRGPlus;
  if (svrg && params.epoch_length < 1)
    throw std::invalid_argument("init_estimator: epoch_length >= 1 required");
  if (params.kind == EstimatorKind::SVRGPlus &&
      (params.anchor_batch < 1 || params.anchor_batch > model.n()))
    throw std::invalid_argument("init_estimator: anchor_batch must be in [1, N]");
  if (positions.cols() != model.dim())
    throw std::invalid_argument("init_estimator: position dimension mismatch");

  EstimatorState st;
  st.params_ = params;
  st.m_ = positions.rows();
  st.initialized_ = true;

  const Eigen::Index n = model.n();
  const Eigen::Index d = model.dim();
  switch (params.kind) {
    case EstimatorKind::Plain:
      break;
    case EstimatorKind::SAGA: {
      st.saga_table_.assign(st.m_, Eigen::MatrixXd(n, d));
      st.saga_sums_.resize(st.m_, d);
      Eigen::VectorXd g(d);
      for (Eigen::Index i = 0; i < st.m_; ++i) {
        const Eigen::VectorXd theta = positions.row(i);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
        for (Eigen::Index j = 0; j < n; ++j) {
          g.setZero();
          model.add_grad_component(j, theta, g);
          st.saga_table_[i].row(j) = g;
          sum += g;
        }
        st.saga_sums_.row(i) = sum;
      }
      st.eval_counter_ += static_cast<uint64_t>(st.m_) * n;
      break;
    }
    case EstimatorKind::SVRG_I:
    case EstimatorKind::SVRG_II:
    case EstimatorKind::SVRGPlus: {
      st.anchor_pos_ = positions;
      st.anchor_grad_.resize(st.m_, d);
      for (Eigen::Index i = 0; i < st.m_; ++i)
        st.anchor_grad_.row(i) = model.full_grad(positions.row(i));
      st.eval_counter_ += static_cast<uint64_t>(st.m_) * n;
      if (params.kind == EstimatorKind::SVRG_I) st.history_.push_back(positions);
      break;
    }
  }
  return st;
}

// G_k^{(i)} for one particle. Reads shared state only; the per-datum
// gradients computed here can be captured via `fresh_out` (B x d) so the SAGA
// table write never recomputes them. Increments the evaluation counter by B
// (Plain, SAGA) or 2B (SVRG kinds).
inline Eigen::VectorXd estimate(EstimatorState& state, const Model& model,
                                const Eigen::VectorXd& theta, Eigen::Index i,
                                const MinibatchDraw& draw, Eigen::MatrixXd* fresh_out = nullptr) {
  if (!state.initialized_) throw std::logic_error("estimate: uninitialized state");
  if (i < 0 || i >= state.m_) throw std::out_of_range("estimate: particle index");
  const Eigen::Index n = model.n();
  const Eigen::Index d = model.dim();
  const int b = draw.size();
  const double scale = static_cast<double>(n) / static_cast<double>(b);
  if (fresh_out) fresh_out->resize(b, d);

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd g(d);
  switch (state.params_.kind) {
    case EstimatorKind::Plain: {
      for (int s = 0; s < b; ++s) {
        g.setZero();
        model.add_grad_component(draw.indices[s], theta, g);
        if (fresh_out) fresh_out->row(s) = g;
        acc += g;
      }
      state.eval_counter_ += b;
      return scale * acc;
    }
    case EstimatorKind::SAGA: {
      for (int s = 0; s < b; ++s) {
        const Eigen::Index j = draw.indices[s];
        g.setZero();
        model.add_grad_component(j, theta, g);
        if (fresh_out) fresh_out->row(s) = g;
        acc += g - state.saga_table_[i].row(j).transpose();
      }
      state.eval_counter_ += b;
      return state.saga_sums_.row(i).transpose() + scale * acc;
    }
    case EstimatorKind::SVRG_I:
    case EstimatorKind::SVRG_II:
    case EstimatorKind::SVRGPlus: {
      const Eigen::VectorXd anchor = state.anchor_pos_.row(i);
      Eigen::VectorXd g_anchor(d);
      for (int s = 0; s < b; ++s) {
        const Eigen::Index j = draw.indices[s];
        g.setZero();
        model.add_grad_component(j, theta, g);
        if (fresh_out) fresh_out->row(s) = g;
        g_anchor.setZero();
        model.add_grad_component(j, anchor, g_anchor);
        acc += g - g_anchor;
      }
      state.eval_counter_ += 2ull * b;
      return state.anchor_grad_.row(i).transpose() + scale * acc;
    }
  }
  throw std::logic_error("unreachable");
}

// One exclusive phase per sampler step, after all estimates for step k.
// SAGA rewrites the touched table rows from the cached fresh gradients;
// SVRG kinds refresh anchors at epoch boundaries; SVRG Option I also rewinds
// the live particle positions to the sampled snapshot.
inline void post_step_update(EstimatorState& state, const Model& model,
                             const Eigen::MatrixXd& pre_step_positions,
                             const std::vector<Eigen::MatrixXd>& fresh_grads,
                             const std::vector<MinibatchDraw>& draws, int64_t k,
                             RngStream& epoch_stream, Eigen::MatrixXd& live_positions) {
  if (!state.initialized_) throw std::logic_error("post_step_update: uninitialized state");
  if (k != state.expected_step_)
    throw std::logic_error("post_step_update: called out of order for step " + std::to_string(k));
  state.expected_step_ = k + 1;

  const Eigen::Index n = model.n();
  const int tau = state.params_.epoch_length;
  const bool epoch_boundary = (k + 1) % tau == 0;

  switch (state.params_.kind) {
    case EstimatorKind::Plain:
      return;
    case EstimatorKind::SAGA: {
      if (fresh_grads.size() != static_cast<size_t>(state.m_) ||
          draws.size() != static_cast<size_t>(state.m_))
        throw std::invalid_argument("post_step_update: need fresh gradients and draws per particle");
      (void)pre_step_positions;  // fresh_grads were evaluated at these positions
      for (Eigen::Index i = 0; i < state.m_; ++i) {
        const auto& draw = draws[i];
        for (int s = 0; s < draw.size(); ++s) {
          const Eigen::Index j = draw.indices[s];
          const Eigen::RowVectorXd fresh = fresh_grads[i].row(s);
          state.saga_sums_.row(i) += fresh - state.saga_table_[i].row(j);
          state.saga_table_[i].row(j) = fresh;
        }
      }
      return;
    }
    case EstimatorKind::SVRG_I: {
      state.history_.push_back(live_positions);
      while (state.history_.size() > static_cast<size_t>(tau)) state.history_.pop_front();
      if (!epoch_boundary) return;
      const auto lag = static_cast<size_t>(epoch_stream.uniform_int(tau));
      if (lag >= state.history_.size())
        throw std::logic_error("post_step_update: SVRG_I history too short for sampled lag");
      state.anchor_pos_ = state.history_[state.history_.size() - 1 - lag];
      live_positions = state.anchor_pos_;
      state.history_.back() = state.anchor_pos_;
      for (Eigen::Index i = 0; i < state.m_; ++i)
        state.anchor_grad_.row(i) = model.full_grad(state.anchor_pos_.row(i));
      state.eval_counter_ += static_cast<uint64_t>(state.m_) * n;
      return;
    }
    case EstimatorKind::SVRG_II: {
      if (!epoch_boundary) return;
      state.anchor_pos_ = live_positions;
      for (Eigen::Index i = 0; i < state.m_; ++i)
        state.anchor_grad_.row(i) = model.full_grad(state.anchor_pos_.row(i));
      state.eval_counter_ += static_cast<uint64_t>(state.m_) * n;
      return;
    }
    case EstimatorKind::SVRGPlus: {
      if (!epoch_boundary) return;
      const int b_anchor = state.params_.anchor_batch;
      const MinibatchDraw anchor_draw = sample_minibatch(epoch_stream, n, b_anchor);
      state.anchor_pos_ = live_positions;
      const double scale = static_cast<double>(n) / static_cast<double>(b_anchor);
      Eigen::VectorXd acc(model.dim());
      Eigen::VectorXd g(model.dim());
      for (Eigen::Index i = 0; i < state.m_; ++i) {
        const Eigen::VectorXd theta = state.anchor_pos_.row(i);
        acc.setZero();
        for (int s = 0; s < b_anchor; ++s) {
          g.setZero();
          model.add_grad_component(anchor_draw.indices[s], theta, g);
          acc += g;
        }
        state.anchor_grad_.row(i) = scale * acc;
      }
      state.eval_counter_ += static_cast<uint64_t>(state.m_) * b_anchor;
      return;
    }
  }
}

// Sample trace-variance of estimate() over fresh draws with the state held
// fixed (the state is copied, so memory and counters are untouched).
inline double estimator_variance(const EstimatorState& state, const Model& model,
                                 const Eigen::VectorXd& theta, Eigen::Index i, int trials,
                                 RngStream& stream) {
  if (trials < 2) throw std::invalid_argument("estimator_variance: need trials >= 2");
  EstimatorState scratch = state;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(model.dim());
  double m2 = 0.0;
  for (int t = 1; t <= trials; ++t) {
    const MinibatchDraw draw = sample_minibatch(stream, model.n(), state.params().batch_size);
    const Eigen::VectorXd x = estimate(scratch, model, theta, i, draw);
    const Eigen::VectorXd delta_old = x - mean;
    mean += delta_old / static_cast<double>(t);
    m2 += delta_old.dot(x - mean);
  }
  return m2 / static_cast<double>(trials - 1);
}

}  // namespace spos
