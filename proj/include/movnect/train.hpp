// Toy-scale teacher-student training loop over the synthetic dataset.
// Gradients run through the double-precision tape; teacher predictions are
// computed once per dataset and cached.
#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "movnect/decode.hpp"
#include "movnect/losses.hpp"
#include "movnect/network.hpp"
#include "movnect/rng.hpp"
#include "movnect/synth.hpp"

namespace movnect {

enum class Optimizer { adam, rmsprop };

struct DistillConfig {
  double alpha = 0.5;             // blend between ground truth and teacher terms
  double learning_rate = 2.5e-4;
  int batch_size = 4;
  Optimizer optimizer = Optimizer::adam;
  int epochs = 20;
  uint64_t seed = 1;
  bool squared_norms = false;     // ablation: squared map norms in both losses
  double val_fraction = 0.2;

  void validate() const {
    if (alpha < 0 || alpha > 1) throw std::invalid_argument("alpha must be in [0,1]");
    if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
    if (batch_size < 1 || epochs < 0) throw std::invalid_argument("bad batch_size/epochs");
    if (val_fraction < 0 || val_fraction >= 1) throw std::invalid_argument("bad val_fraction");
  }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double val_mpjpe_mm = 0;
  double wall_ms = 0;
};

struct TrainResult {
  Network<double> net;
  std::vector<EpochMetrics> metrics;
};

namespace detail_train {

struct TeacherMaps {
  Tensor<float> heat, locx, locy, locz;  // cached in single precision
};

class OptimizerState {
 public:
  OptimizerState(Optimizer kind, double lr) : kind_(kind), lr_(lr) {}

  void apply(Network<double>& net, const std::string& name, const Tensor<double>& grad) {
    Tensor<double> w = net.weight(name);
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) m = Tensor<double>(grad.shape());
    if (v.empty()) v = Tensor<double>(grad.shape());
    double* wp = w.mut();
    double* mp = m.mut();
    double* vp = v.mut();
    const double* gp = grad.data();
    const int64_t n = grad.numel();
    if (kind_ == Optimizer::adam) {
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double c1 = 1.0 - std::pow(b1, step_), c2 = 1.0 - std::pow(b2, step_);
      for (int64_t i = 0; i < n; ++i) {
        mp[i] = b1 * mp[i] + (1 - b1) * gp[i];
        vp[i] = b2 * vp[i] + (1 - b2) * gp[i] * gp[i];
        wp[i] -= lr_ * (mp[i] / c1) / (std::sqrt(vp[i] / c2) + eps);
      }
    } else {
      const double rho = 0.9, eps = 1e-7;
      for (int64_t i = 0; i < n; ++i) {
        vp[i] = rho * vp[i] + (1 - rho) * gp[i] * gp[i];
        wp[i] -= lr_ * gp[i] / (std::sqrt(vp[i]) + eps);
      }
    }
    net.set_weight(name, std::move(w));
  }

  void next_step() { ++step_; }

 private:
  Optimizer kind_;
  double lr_;
  int64_t step_ = 1;
  std::map<std::string, Tensor<double>> m_, v_;
};

}  // namespace detail_train

// Validation: full decode chain (heatmap argmax -> location-map read) vs GT.
inline double validation_mpjpe(const Network<double>& net,
                               const std::vector<SupervisionSample>& val, int output_stride) {
  if (val.empty()) return 0;
  double total = 0;
  for (const auto& s : val) {
    auto out = net.forward(s.image);
    Keypoints2D kps = decode_keypoints(out.heat, output_stride);
    Tensor<double> pose = decode_pose(out.locx, out.locy, out.locz, kps, output_stride);
    total += mpjpe(pose, s.gt_pose);
  }
  return total / static_cast<double>(val.size());
}

// Trains `student_spec` on `data`; with no teacher the blend factor is
// forced to 1 (pure ground truth). Aborts on a non-finite loss.
inline TrainResult train(const NetworkSpec& student_spec, const Network<double>* teacher,
                         const std::vector<SupervisionSample>& data, const DistillConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const double alpha = teacher ? cfg.alpha : 1.0;
  const int stride = student_spec.output_stride;

  const size_t n_val = static_cast<size_t>(std::llround(cfg.val_fraction * data.size()));
  const size_t n_train = data.size() - n_val;
  if (n_train == 0) throw std::invalid_argument("train: no training samples after split");
  std::vector<SupervisionSample> val(data.begin() + n_train, data.end());

  // teacher predictions, cached once per sample
  std::vector<detail_train::TeacherMaps> cache;
  if (teacher && alpha < 1.0) {
    cache.reserve(n_train);
    for (size_t i = 0; i < n_train; ++i) {
      auto out = teacher->forward(data[i].image);
      cache.push_back({out.heat.cast<float>(), out.locx.cast<float>(), out.locy.cast<float>(),
                       out.locz.cast<float>()});
    }
  }

  TrainResult result{Network<double>::build(student_spec, cfg.seed), {}};
  Network<double>& net = result.net;
  detail_train::OptimizerState opt(cfg.optimizer, cfg.learning_rate);

  std::vector<size_t> order(n_train);
  for (size_t i = 0; i < n_train; ++i) order[i] = i;

  int64_t step_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = Rng::named(cfg.seed, "epoch" + std::to_string(epoch));
    for (size_t i = n_train; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(static_cast<int64_t>(i))]);

    double epoch_loss = 0;
    size_t batches = 0;
    for (size_t b0 = 0; b0 < n_train; b0 += cfg.batch_size) {
      const size_t b1 = std::min(n_train, b0 + cfg.batch_size);
      std::map<std::string, Tensor<double>> grads;
      double batch_loss = 0;
      for (size_t bi = b0; bi < b1; ++bi) {
        const SupervisionSample& s = data[order[bi]];
        Tape tape;
        auto vars = net.register_weights(tape);
        auto out = net.forward_taped(tape, vars, s.image);

        Tensor<double> teacher_heat;
        LocMaps teacher_loc;
        const LocMaps* teacher_ptr = nullptr;
        if (!cache.empty()) {
          const auto& tm = cache[order[bi]];
          teacher_heat = tm.heat.cast<double>();
          teacher_loc = {tm.locx.cast<double>(), tm.locy.cast<double>(), tm.locz.cast<double>()};
          teacher_ptr = &teacher_loc;
        }
        Var l_hm = heatmap_loss(tape, out.heat, s.gt_heatmaps, teacher_heat, alpha,
                                cfg.squared_norms);
        Var l_lm = locmap_loss(tape, out.locx, out.locy, out.locz, s.gt_locmaps, teacher_ptr,
                               s.gt_heatmaps, alpha, cfg.squared_norms);
        Var loss = tape.add(l_hm, l_lm);
        const double lv = loss.value.data()[0];
        if (!std::isfinite(lv))
          throw std::runtime_error("train: non-finite loss at step " +
                                   std::to_string(step_index) + " (sample " +
                                   std::to_string(order[bi]) + ")");
        batch_loss += lv;
        tape.backward_scalar(loss);
        for (const auto& name : net.weight_names()) {
          if (!Network<double>::is_trainable(name)) continue;
          Tensor<double> g = tape.grad(vars.at(name));
          auto it = grads.find(name);
          if (it == grads.end()) {
            grads.emplace(name, std::move(g));
          } else {
            double* acc = it->second.mut();
            const double* src = g.data();
            for (int64_t k = 0; k < g.numel(); ++k) acc[k] += src[k];
          }
        }
        ++step_index;
      }
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      for (auto& [name, g] : grads) {
        double* p = g.mut();
        for (int64_t k = 0; k < g.numel(); ++k) p[k] *= inv;
        opt.apply(net, name, g);
      }
      opt.next_step();
      epoch_loss += batch_loss * inv;
      ++batches;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = batches ? epoch_loss / static_cast<double>(batches) : 0;
    m.val_mpjpe_mm = validation_mpjpe(net, val, stride);
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
    result.metrics.push_back(m);
  }
  return result;
}

inline void write_metrics_csv(const std::vector<EpochMetrics>& metrics, std::ostream& os) {
  os << "epoch,train_loss,val_mpjpe_mm,wall_ms\n";
  char buf[160];
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.3f\n", m.epoch, m.train_loss, m.val_mpjpe_mm,
                  m.wall_ms);
    os << buf;
  }
}

}  // namespace movnect
