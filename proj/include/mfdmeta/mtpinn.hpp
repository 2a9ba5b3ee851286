#pragma once

#include "mfdmeta/autodiff.hpp"
#include "mfdmeta/dataio.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mfd {

// Shared feature trunk with three output branches (flow, critical occupancy,
// max flow) plus two learnable loss parameters: the vertex offset and the
// congested-width scaler. A single-head variant (flow only, no physics loss)
// doubles as the plain-NN baseline.
struct MtpinnConfig {
    std::vector<int> hidden_sizes{64, 64, 64}; // trunk widths
    // Branch hidden widths. Empty = one linear readout per head, which is
    // what cold-start transfer (branches re-initialized to zero) requires to
    // keep a nonzero gradient path.
    std::vector<int> branch_sizes{};
    double dropout = 0.0;
    double alpha = 1.0; // physics-loss weight
    double w1 = 1.0;    // uncongested parabola-loss weight
    double w2 = 1.0;    // congested parabola-loss weight
    double lr = 0.001;
    int batch_size = 32;
    int epochs = 300;
    double init_offset = 0.0;
    double init_scaler = 3.0;
    double val_fraction = 0.15;  // 0 disables the split (train on everything)
    double test_fraction = 0.15;
    bool single_head = false; // plain NN: flow branch only, loss is pure MSE
    uint64_t seed = 0;
};

struct MtpinnModel {
    MtpinnConfig config;
    ParameterSet params;
    std::optional<NormScales> norm; // captured at training time
};

MtpinnModel init_mtpinn(const MtpinnConfig& config);

struct MtpinnOutputs {
    Var flow;   // [N,1]
    Var x_cd;   // scalar in (0,1); absent single_head
    Var f_max;  // scalar in (0,1); absent single_head
    Var offset; // scalar
    Var scaler; // scalar > 1
};

/// Functional forward pass over bound parameters; x_col is [N,1] normalized
/// occupancy. Dropout draws from `dropout_seed` (rate 0 is the identity).
MtpinnOutputs mtpinn_forward(const MtpinnConfig& config, const BoundParams& params,
                             const Tensor& x_col, double dropout_rate, uint64_t dropout_seed);

struct PhysicsLossParts {
    Var total;
    double l1 = 0, l2 = 0, lam_offset = 0, lam_scale = 0, lam_max = 0;
    bool regime1_empty = false, regime2_empty = false, clamped_xcd = false;
};

PhysicsLossParts physics_loss(const MtpinnOutputs& out, const Tensor& x_col, const Tensor& f_col,
                              double w1, double w2);

struct TotalLossParts {
    Var total;
    double mse = 0;
    PhysicsLossParts physics;
};

/// L_mse + alpha * L_physics (pure MSE for single-head models).
TotalLossParts total_loss(const MtpinnConfig& config, const MtpinnOutputs& out, const Tensor& x_col,
                          const Tensor& f_col);

struct TrainTrace {
    std::vector<double> train_loss; // per epoch
    std::vector<double> val_mse;    // per epoch, empty when val_fraction == 0
    int best_epoch = -1;
};

struct TrainOptions {
    bool freeze_trunk = false; // trunk gradients suppressed (transfer learning)
};

/// Minibatch Adam on the composite loss with a 70/15/15 interval split and
/// best-validation snapshot (when val_fraction > 0). Deterministic per seed.
MtpinnModel train_mtpinn(const MtpinnModel& model, const MfdSeries& normalized,
                         const MtpinnConfig& config, TrainTrace* trace = nullptr,
                         const TrainOptions& options = {});

struct MtpinnPrediction {
    std::vector<double> grid;
    std::vector<double> flow; // normalized units
    double x_cd_norm = 0, f_max_norm = 0;
    double x_cd = 0, f_max = 0; // denormalized via the model's stored scales
};

MtpinnPrediction predict_mfd(const MtpinnModel& model, const std::vector<double>& grid);

/// Flow predictions (normalized) at the given occupancies, dropout off.
std::vector<double> predict_flows(const MtpinnModel& model, const std::vector<double>& xs);

} // namespace mfd
