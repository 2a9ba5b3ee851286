#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mfd {

struct DetectorRecord {
    std::string city;
    std::string detector;
    int64_t interval_start = 0; // epoch seconds
    double flow = 0.0;          // veh/hour/lane
    double occupancy = 0.0;     // fraction
};

struct NormScales {
    double flow_scale = 1.0;
    double occ_scale = 1.0;
};

struct MfdPoint {
    int64_t interval_start = 0;
    double occupancy = 0.0;
    double flow = 0.0;
};

struct MfdSeries {
    std::string city;
    std::vector<std::string> detector_subset; // sorted
    std::vector<MfdPoint> points;             // sorted by interval
    std::optional<NormScales> norm;           // set once normalized
};

struct BiasedDatasetBundle {
    std::string city;
    int n_detectors = 0;
    uint64_t seed = 0;
    std::vector<MfdSeries> replicas;
};

/// Everything needed to fabricate a city whose true MFD is known exactly.
struct SyntheticCitySpec {
    std::string name = "synthetic";
    double x_cd = 0.3;
    double f_vertex = 900.0;
    double width_ratio = 2.0; // congested half-width as multiple of x_cd
    int n_detectors = 120;
    double noise_sigma = 0.0;         // flow noise, veh/h/lane
    double detector_bias_sigma = 0.0; // per-detector offset scale
    uint64_t seed = 0;
    int days = 2;
    int intervals_per_day = 480;          // 3-minute aggregation
    double low_occupancy_fraction = 0.6;  // share of intervals below 0.5*x_cd
};

/// The true bi-parabolic curve of a synthetic spec.
double synthetic_flow(const SyntheticCitySpec& spec, double occupancy);

struct LoadRejection {
    size_t line = 0;
    std::string reason;
    std::string text;
};

struct LoadResult {
    std::vector<DetectorRecord> records;
    std::vector<LoadRejection> rejections;
};

/// CSV with header `city,detector,interval,flow,occupancy`; interval is
/// epoch seconds or ISO-8601. Malformed rows land in the rejection report.
LoadResult load_records(const std::string& path);

struct DroppedRecord {
    DetectorRecord record;
    std::string reason;
};

struct CleanResult {
    std::vector<DetectorRecord> kept;
    std::vector<DroppedRecord> dropped;
};

/// Applies the five value rules, then drops detectors whose reported
/// intervals are valid less than 80% of the time, then intervals covered by
/// fewer than 80% of the surviving detectors. Single pass, idempotent.
CleanResult clean_records(const std::vector<DetectorRecord>& records);

/// Per-interval unweighted means across the subset's detectors; intervals
/// with observations from less than 80% of the subset are omitted (pass
/// apply_interval_rule=false to keep every interval that has any data).
MfdSeries aggregate(const std::vector<DetectorRecord>& records,
                    const std::vector<std::string>& detector_subset,
                    bool apply_interval_rule = true);

/// All detectors present in the records of one city.
std::vector<std::string> detectors_of(const std::vector<DetectorRecord>& records,
                                      const std::string& city);

/// 30 aggregated series from distinct uniformly-sampled detector subsets.
/// Requires >100 detectors and more than one day of observations.
BiasedDatasetBundle make_biased_bundles(const std::vector<DetectorRecord>& records,
                                        const std::string& city, int n_detectors,
                                        int replicas = 30, uint64_t seed = 0);

/// Scale flows/occupancies into [0,1] by the series' own maxima.
MfdSeries normalize(const MfdSeries& series);
/// Scale by externally supplied maxima (biased replicas use the full-detector
/// scales of their city).
MfdSeries normalize(const MfdSeries& series, const NormScales& scales);
MfdSeries denormalize(const MfdSeries& series);

std::vector<DetectorRecord> generate_synthetic_city(const SyntheticCitySpec& spec);

// Series files: CSV `occupancy,flow` next to a JSON sidecar with metadata.
void write_series(const MfdSeries& series, const std::string& csv_path, uint64_t seed = 0);
MfdSeries read_series(const std::string& csv_path);

} // namespace mfd
