#include "mfdmeta/dataio.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace mfd {

namespace {

bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e && std::isfinite(out);
}

// Days-from-civil (Gregorian), used to turn ISO timestamps into epoch seconds
// without timezone handling.
int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2u) / 5u + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

bool parse_interval(const std::string& s, int64_t& out) {
    if (s.empty()) return false;
    bool digits = true;
    for (size_t i = (s[0] == '-' ? 1 : 0); i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) digits = false;
    if (digits && s != "-") {
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        return ec == std::errc() && p == s.data() + s.size();
    }
    int y, mo, d, h = 0, mi = 0, se = 0;
    char sep;
    if (std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &se) >= 3) {
        if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60) return false;
        out = days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
        return true;
    }
    return false;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace

LoadResult load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_records: cannot open " + path);
    LoadResult res;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_records: empty file " + path);
    {
        auto header = split_csv_line(line);
        const std::vector<std::string> want{"city", "detector", "interval", "flow", "occupancy"};
        if (header != std::vector<std::string>(want.begin(), want.end()))
            throw std::runtime_error("load_records: header must be city,detector,interval,flow,occupancy");
    }
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 5) {
            res.rejections.push_back({lineno, "wrong field count", line});
            continue;
        }
        DetectorRecord r;
        r.city = f[0];
        r.detector = f[1];
        if (r.city.empty() || r.detector.empty()) {
            res.rejections.push_back({lineno, "empty id", line});
            continue;
        }
        if (!parse_interval(f[2], r.interval_start)) {
            res.rejections.push_back({lineno, "bad interval", line});
            continue;
        }
        if (!parse_double(f[3], r.flow) || !parse_double(f[4], r.occupancy)) {
            res.rejections.push_back({lineno, "non-numerical", line});
            continue;
        }
        res.records.push_back(std::move(r));
    }
    return res;
}

CleanResult clean_records(const std::vector<DetectorRecord>& records) {
    CleanResult res;

    // Value rules first.
    std::vector<DetectorRecord> valid;
    valid.reserve(records.size());
    for (const auto& r : records) {
        if (r.flow < 0.0 || r.occupancy < 0.0) {
            res.dropped.push_back({r, "negative flow or occupancy"});
        } else if (r.occupancy > 1.0) {
            res.dropped.push_back({r, "occupancy>1"});
        } else if (r.flow > 2500.0) {
            res.dropped.push_back({r, "flow>2500"});
        } else if (r.flow < 10.0 && r.occupancy >= 0.2 && r.occupancy <= 0.75) {
            res.dropped.push_back({r, "flow<10 in occ∈[0.2,0.75]"});
        } else if (r.flow > 100.0 && r.occupancy > 0.95) {
            res.dropped.push_back({r, "flow>100 at occ>0.95"});
        } else {
            valid.push_back(r);
        }
    }

    // Detector rule, per city: valid share of the detector's own reported
    // intervals must reach 80%. Normalizing by reported (not all) intervals
    // keeps the pass idempotent.
    struct Key {
        std::string city, detector;
        bool operator<(const Key& o) const {
            return city != o.city ? city < o.city : detector < o.detector;
        }
    };
    std::map<Key, std::set<int64_t>> reported, valid_at;
    for (const auto& r : records) reported[{r.city, r.detector}].insert(r.interval_start);
    for (const auto& r : valid) valid_at[{r.city, r.detector}].insert(r.interval_start);

    std::set<Key> keep_detector;
    for (const auto& [key, rep] : reported) {
        auto it = valid_at.find(key);
        const size_t nvalid = it == valid_at.end() ? 0 : it->second.size();
        if (nvalid * 5 >= rep.size() * 4) keep_detector.insert(key);
    }

    std::vector<DetectorRecord> after_detector;
    for (auto& r : valid) {
        if (keep_detector.count({r.city, r.detector}))
            after_detector.push_back(std::move(r));
        else
            res.dropped.push_back({r, "detector<80% valid"});
    }

    // Interval rule, per city: need valid data from at least 80% of the
    // surviving detectors.
    std::map<std::string, std::set<std::string>> city_detectors;
    for (const auto& r : after_detector) city_detectors[r.city].insert(r.detector);
    std::map<std::pair<std::string, int64_t>, std::set<std::string>> interval_cov;
    for (const auto& r : after_detector)
        interval_cov[{r.city, r.interval_start}].insert(r.detector);

    for (auto& r : after_detector) {
        const size_t cov = interval_cov[{r.city, r.interval_start}].size();
        const size_t total = city_detectors[r.city].size();
        if (cov * 5 >= total * 4)
            res.kept.push_back(std::move(r));
        else
            res.dropped.push_back({r, "interval<80% detectors"});
    }
    return res;
}

std::vector<std::string> detectors_of(const std::vector<DetectorRecord>& records,
                                      const std::string& city) {
    std::set<std::string> s;
    for (const auto& r : records)
        if (r.city == city) s.insert(r.detector);
    return {s.begin(), s.end()};
}

MfdSeries aggregate(const std::vector<DetectorRecord>& records,
                    const std::vector<std::string>& detector_subset, bool apply_interval_rule) {
    if (detector_subset.empty()) throw std::invalid_argument("aggregate: empty detector subset");

    std::unordered_set<std::string> subset(detector_subset.begin(), detector_subset.end());
    std::unordered_set<std::string> present;
    std::string city;
    for (const auto& r : records) {
        if (!subset.count(r.detector)) continue;
        present.insert(r.detector);
        if (city.empty())
            city = r.city;
        else if (city != r.city)
            throw std::invalid_argument("aggregate: records span multiple cities");
    }
    for (const auto& d : detector_subset)
        if (!present.count(d))
            throw std::invalid_argument("aggregate: detector " + d + " has no records");

    struct Acc {
        double occ = 0, flow = 0;
        int n = 0;
    };
    // interval -> detector -> accumulated readings
    std::map<int64_t, std::map<std::string, Acc>> grid;
    for (const auto& r : records) {
        if (!subset.count(r.detector)) continue;
        Acc& a = grid[r.interval_start][r.detector];
        a.occ += r.occupancy;
        a.flow += r.flow;
        a.n += 1;
    }

    MfdSeries series;
    series.city = city;
    series.detector_subset = detector_subset;
    std::sort(series.detector_subset.begin(), series.detector_subset.end());

    const size_t n_subset = detector_subset.size();
    for (const auto& [interval, dets] : grid) {
        if (apply_interval_rule && dets.size() * 5 < n_subset * 4) continue;
        double occ = 0, flow = 0;
        for (const auto& [_, a] : dets) {
            occ += a.occ / a.n;
            flow += a.flow / a.n;
        }
        series.points.push_back({interval, occ / static_cast<double>(dets.size()),
                                 flow / static_cast<double>(dets.size())});
    }
    if (series.points.empty()) throw std::runtime_error("aggregate: no qualifying intervals");
    return series;
}

BiasedDatasetBundle make_biased_bundles(const std::vector<DetectorRecord>& records,
                                        const std::string& city, int n_detectors, int replicas,
                                        uint64_t seed) {
    if (n_detectors <= 0) throw std::invalid_argument("make_biased_bundles: n_detectors <= 0");
    std::vector<DetectorRecord> city_records;
    for (const auto& r : records)
        if (r.city == city) city_records.push_back(r);
    if (city_records.empty()) throw std::invalid_argument("make_biased_bundles: unknown city " + city);

    auto detectors = detectors_of(city_records, city);
    if (detectors.size() <= 100)
        throw std::invalid_argument("make_biased_bundles: city needs more than 100 detectors, has " +
                                    std::to_string(detectors.size()));
    if (static_cast<size_t>(n_detectors) > detectors.size())
        throw std::invalid_argument("make_biased_bundles: subset larger than detector count");

    int64_t tmin = city_records.front().interval_start, tmax = tmin;
    std::set<int64_t> days;
    for (const auto& r : city_records) {
        tmin = std::min(tmin, r.interval_start);
        tmax = std::max(tmax, r.interval_start);
        days.insert(r.interval_start / 86400);
    }
    if (tmax - tmin < 86400 || days.size() < 2)
        throw std::invalid_argument("make_biased_bundles: city needs more than one day of observations");

    BiasedDatasetBundle bundle;
    bundle.city = city;
    bundle.n_detectors = n_detectors;
    bundle.seed = seed;

    // Index the city once: interval x detector grid of per-cell means.
    std::map<int64_t, size_t> interval_of;
    for (const auto& r : city_records) interval_of.emplace(r.interval_start, 0);
    {
        size_t k = 0;
        for (auto& [t, pos] : interval_of) pos = k++;
    }
    std::map<std::string, size_t> detector_of;
    for (size_t d = 0; d < detectors.size(); ++d) detector_of[detectors[d]] = d;
    const size_t n_int = interval_of.size(), n_det = detectors.size();
    std::vector<double> occ_sum(n_int * n_det, 0), flow_sum(n_int * n_det, 0);
    std::vector<int> count(n_int * n_det, 0);
    std::vector<int64_t> interval_at(n_int);
    for (const auto& [t, pos] : interval_of) interval_at[pos] = t;
    for (const auto& r : city_records) {
        const size_t cell = interval_of[r.interval_start] * n_det + detector_of[r.detector];
        occ_sum[cell] += r.occupancy;
        flow_sum[cell] += r.flow;
        count[cell] += 1;
    }

    std::mt19937_64 rng(seed);
    std::set<std::vector<std::string>> seen;
    while (static_cast<int>(bundle.replicas.size()) < replicas) {
        // Partial Fisher-Yates draw without replacement.
        std::vector<std::string> pool = detectors;
        for (int i = 0; i < n_detectors; ++i) {
            std::uniform_int_distribution<size_t> u(i, pool.size() - 1);
            std::swap(pool[i], pool[u(rng)]);
        }
        std::vector<std::string> subset(pool.begin(), pool.begin() + n_detectors);
        std::sort(subset.begin(), subset.end());
        if (!seen.insert(subset).second) continue; // replica subsets never repeat

        std::vector<size_t> cols;
        cols.reserve(subset.size());
        for (const auto& d : subset) cols.push_back(detector_of[d]);

        MfdSeries series;
        series.city = city;
        series.detector_subset = subset;
        for (size_t ti = 0; ti < n_int; ++ti) {
            double occ = 0, flow = 0;
            size_t reporting = 0;
            for (size_t c : cols) {
                const size_t cell = ti * n_det + c;
                if (count[cell] == 0) continue;
                occ += occ_sum[cell] / count[cell];
                flow += flow_sum[cell] / count[cell];
                ++reporting;
            }
            if (reporting * 5 < subset.size() * 4) continue; // 80% of the subset
            series.points.push_back({interval_at[ti], occ / static_cast<double>(reporting),
                                     flow / static_cast<double>(reporting)});
        }
        if (series.points.empty())
            throw std::runtime_error("make_biased_bundles: replica has no qualifying intervals");
        bundle.replicas.push_back(std::move(series));
    }
    return bundle;
}

MfdSeries normalize(const MfdSeries& series) {
    if (series.points.empty()) throw std::invalid_argument("normalize: empty series");
    double fmax = 0, omax = 0;
    for (const auto& p : series.points) {
        fmax = std::max(fmax, p.flow);
        omax = std::max(omax, p.occupancy);
    }
    if (fmax <= 0 || omax <= 0) throw std::runtime_error("normalize: zero max flow or occupancy");
    return normalize(series, {fmax, omax});
}

MfdSeries normalize(const MfdSeries& series, const NormScales& scales) {
    if (series.points.empty()) throw std::invalid_argument("normalize: empty series");
    if (scales.flow_scale <= 0 || scales.occ_scale <= 0)
        throw std::invalid_argument("normalize: scales must be positive");
    if (series.norm) throw std::logic_error("normalize: series already normalized");
    MfdSeries out = series;
    for (auto& p : out.points) {
        p.flow /= scales.flow_scale;
        p.occupancy /= scales.occ_scale;
    }
    out.norm = scales;
    return out;
}

MfdSeries denormalize(const MfdSeries& series) {
    if (!series.norm) throw std::logic_error("denormalize: series has no norm scales");
    MfdSeries out = series;
    for (auto& p : out.points) {
        p.flow *= series.norm->flow_scale;
        p.occupancy *= series.norm->occ_scale;
    }
    out.norm.reset();
    return out;
}

double synthetic_flow(const SyntheticCitySpec& spec, double occupancy) {
    const double x = occupancy;
    if (x <= spec.x_cd) {
        const double a1 = spec.f_vertex / (spec.x_cd * spec.x_cd);
        return -a1 * (x - spec.x_cd) * (x - spec.x_cd) + spec.f_vertex;
    }
    const double half_width = spec.width_ratio * spec.x_cd;
    const double a2 = spec.f_vertex / (half_width * half_width);
    return -a2 * (x - spec.x_cd) * (x - spec.x_cd) + spec.f_vertex;
}

std::vector<DetectorRecord> generate_synthetic_city(const SyntheticCitySpec& spec) {
    if (spec.x_cd <= 0 || spec.x_cd >= 1 || spec.f_vertex <= 0 || spec.width_ratio <= 0 ||
        spec.n_detectors <= 0 || spec.days <= 0 || spec.intervals_per_day <= 0)
        throw std::invalid_argument("generate_synthetic_city: invalid spec");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Persistent per-detector biases: an occupancy factor (where on the
    // profile the detector sits) and a capacity factor (how much flow its
    // road carries at a given occupancy). The capacity factor does not
    // cancel out of subset averages, so small subsets trace visibly shifted
    // MFDs -- that is what makes them biased relative to the full set.
    std::vector<double> occ_factor(spec.n_detectors), cap_factor(spec.n_detectors);
    for (int d = 0; d < spec.n_detectors; ++d) {
        // Truncated draws keep extreme detectors from wandering past the
        // congested zero-crossing, where the cleaning rules would evict them.
        occ_factor[d] = std::exp(spec.detector_bias_sigma * std::clamp(gauss(rng), -2.0, 2.0));
        cap_factor[d] = std::exp(spec.detector_bias_sigma * std::clamp(gauss(rng), -2.0, 2.0));
    }

    const double occ_peak = std::min(0.93, spec.x_cd * (1.0 + 0.85 * spec.width_ratio));
    const double occ_cap = std::min(0.93, spec.x_cd * (1.0 + 0.9 * spec.width_ratio));
    const double occ_low = 0.5 * spec.x_cd;
    const int total = spec.days * spec.intervals_per_day;
    const int64_t epoch0 = 1600000000; // fixed reference day boundary offset
    const int64_t dt = 86400 / spec.intervals_per_day;

    std::vector<DetectorRecord> records;
    records.reserve(static_cast<size_t>(total) * spec.n_detectors);
    for (int t = 0; t < total; ++t) {
        const double phase = static_cast<double>(t % spec.intervals_per_day) /
                             static_cast<double>(spec.intervals_per_day);
        // Day profile: a low-occupancy regime for low_occupancy_fraction of
        // the day, then a triangular ramp through x_cd up to occ_peak.
        double network_occ;
        const double q = spec.low_occupancy_fraction;
        if (phase < q) {
            network_occ = 0.02 + (occ_low - 0.02) * (phase / q);
        } else {
            const double s = (phase - q) / (1.0 - q); // 0..1 over the rush window
            const double tri = s < 0.5 ? 2.0 * s : 2.0 * (1.0 - s);
            network_occ = occ_low + (occ_peak - occ_low) * tri;
        }
        for (int d = 0; d < spec.n_detectors; ++d) {
            DetectorRecord r;
            r.city = spec.name;
            char buf[16];
            std::snprintf(buf, sizeof buf, "d%04d", d);
            r.detector = buf;
            r.interval_start = epoch0 + static_cast<int64_t>(t) * dt;
            const double occ = std::clamp(network_occ * occ_factor[d], 0.001, occ_cap);
            double flow = cap_factor[d] * synthetic_flow(spec, occ);
            if (spec.noise_sigma > 0) flow += spec.noise_sigma * gauss(rng);
            r.occupancy = occ;
            r.flow = std::clamp(flow, 0.0, 2400.0);
            records.push_back(std::move(r));
        }
    }
    return records;
}

void write_series(const MfdSeries& series, const std::string& csv_path, uint64_t seed) {
    std::ofstream out(csv_path);
    if (!out) throw std::runtime_error("write_series: cannot open " + csv_path);
    out << "occupancy,flow\n";
    char buf[64];
    for (const auto& p : series.points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.occupancy, p.flow);
        out << buf;
    }

    nlohmann::json meta;
    meta["city"] = series.city;
    meta["detector_subset"] = series.detector_subset;
    meta["n_points"] = series.points.size();
    meta["seed"] = seed;
    meta["intervals"] = nlohmann::json::array();
    for (const auto& p : series.points) meta["intervals"].push_back(p.interval_start);
    if (series.norm) {
        meta["norm"] = {{"flow_scale", series.norm->flow_scale},
                        {"occ_scale", series.norm->occ_scale}};
    }
    std::ofstream jout(csv_path + ".json");
    if (!jout) throw std::runtime_error("write_series: cannot open " + csv_path + ".json");
    jout << meta.dump(2) << "\n";
}

MfdSeries read_series(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("read_series: cannot open " + csv_path);
    MfdSeries s;
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"occupancy", "flow"})
        throw std::runtime_error("read_series: bad header in " + csv_path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        MfdPoint p;
        if (f.size() != 2 || !parse_double(f[0], p.occupancy) || !parse_double(f[1], p.flow))
            throw std::runtime_error("read_series: bad row in " + csv_path + ": " + line);
        s.points.push_back(p);
    }

    std::ifstream jin(csv_path + ".json");
    if (jin) {
        nlohmann::json meta = nlohmann::json::parse(jin);
        s.city = meta.value("city", "");
        if (meta.contains("detector_subset"))
            s.detector_subset = meta["detector_subset"].get<std::vector<std::string>>();
        if (meta.contains("intervals")) {
            auto iv = meta["intervals"].get<std::vector<int64_t>>();
            for (size_t i = 0; i < iv.size() && i < s.points.size(); ++i)
                s.points[i].interval_start = iv[i];
        }
        if (meta.contains("norm"))
            s.norm = NormScales{meta["norm"]["flow_scale"].get<double>(),
                                meta["norm"]["occ_scale"].get<double>()};
    }
    return s;
}

} // namespace mfd
