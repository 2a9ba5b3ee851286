#pragma once

#include "mfdmeta/biparabolic.hpp"
#include "mfdmeta/metalearn.hpp"
#include "mfdmeta/mtpinn.hpp"

#include <string>

namespace mfd {

// JSON files for trained artifacts: parameters, configs, norm scales, traces.

void save_mtpinn(const MtpinnModel& model, const TrainTrace& trace, const std::string& path);
MtpinnModel load_mtpinn(const std::string& path);

void save_biparabolic(const BiParabolicFit& fit, const MfdSeries& normalized,
                      const std::string& path);
BiParabolicFit load_biparabolic(const std::string& path);

void save_meta_result(const MetaResult& result, const MetaConfig& cfg, const std::string& path);
MetaResult load_meta_result(const std::string& path);

void save_fit_report(const FitReport& report, const std::string& path);

MetaConfig load_meta_config(const std::string& path);

} // namespace mfd
