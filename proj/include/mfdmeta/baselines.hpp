#pragma once

#include "mfdmeta/metalearn.hpp"

namespace mfd {

// Comparison models: scratch-trained MTPINN on the biased support, a plain
// single-head network, and model-based transfer learning with a frozen trunk
// and cold or warm task branches.

struct TransferConfig {
    enum class Mode { Cold, Warm };
    Mode mode = Mode::Cold;
    int finetune_epochs = 1000; // the paper reports 5 and 1000
};

/// MTPINN trained only on the task's support observations (batch 10, 100
/// epochs, dropout 0.1 per the comparison protocol), evaluated on the query.
FitReport train_scratch_comparison(const Task& task, const MtpinnConfig& learner, uint64_t seed);

/// Same trunk, single flow head, MSE only.
FitReport train_plain_nn(const Task& task, const MtpinnConfig& learner, uint64_t seed);

enum class PretrainData { SupportAndQuery, QueryOnly, SupportOnly };

/// One model trained on the pooled series of all non-held-out cities: per
/// city, one sampled support replica plus the full-detector (query) series.
MtpinnModel transfer_pretrain(const TaskPool& pool, const MtpinnConfig& learner, int epochs,
                              uint64_t seed, PretrainData data = PretrainData::SupportAndQuery);

/// Freeze the trunk, retrain the branches on the target support (cold mode
/// zeroes the branch weights first).
MtpinnModel transfer_finetune(const MtpinnModel& pretrained, const MfdSeries& target_support,
                              const TransferConfig& tcfg, uint64_t seed);

/// Full transfer pipeline for one task, reporting query metrics.
FitReport transfer_evaluate(const MtpinnModel& pretrained, const Task& task,
                            const TransferConfig& tcfg, uint64_t seed, const std::string& label);

/// Query-side evaluation shared by every baseline.
FitReport evaluate_on_query(const MtpinnModel& model, const Task& task, const std::string& label);

} // namespace mfd
