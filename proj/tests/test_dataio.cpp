#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfdmeta/dataio.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace mfd;

namespace {

bool same_record(const DetectorRecord& a, const DetectorRecord& b) {
    return a.city == b.city && a.detector == b.detector && a.interval_start == b.interval_start &&
           a.flow == b.flow && a.occupancy == b.occupancy;
}

std::string write_temp_csv(const std::string& body) {
    static int counter = 0;
    auto path = std::filesystem::temp_directory_path() /
                ("mfd_dataio_test_" + std::to_string(counter++) + ".csv");
    std::ofstream out(path);
    out << body;
    return path.string();
}

DetectorRecord rec(const std::string& det, int64_t t, double flow, double occ,
                   const std::string& city = "c") {
    return {city, det, t, flow, occ};
}

// Dense random record sets for the property checks.
std::vector<DetectorRecord> random_records(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ndet(3, 8), nint(5, 15);
    std::uniform_real_distribution<double> uflow(-100, 2700), uocc(-0.1, 1.1), gap(0, 1);
    std::vector<DetectorRecord> out;
    const int D = ndet(rng), T = nint(rng);
    for (int d = 0; d < D; ++d)
        for (int t = 0; t < T; ++t) {
            if (gap(rng) < 0.15) continue; // missing reading
            out.push_back(rec("d" + std::to_string(d), t * 300, uflow(rng), uocc(rng)));
        }
    return out;
}

} // namespace

TEST_CASE("load_records: well-formed, malformed, and empty files") {
    auto p1 = write_temp_csv("city,detector,interval,flow,occupancy\n"
                             "a,d1,0,100,0.1\n"
                             "a,d2,300,200,0.2\n"
                             "a,d3,600,300,0.3\n");
    auto r1 = load_records(p1);
    CHECK(r1.records.size() == 3);
    CHECK(r1.rejections.empty());

    auto p2 = write_temp_csv("city,detector,interval,flow,occupancy\n"
                             "a,d1,0,100,0.1\n"
                             "a,d2,300,abc,0.2\n"
                             "a,d3,600,300,0.3\n");
    auto r2 = load_records(p2);
    CHECK(r2.records.size() == 2);
    REQUIRE(r2.rejections.size() == 1);
    CHECK(r2.rejections[0].reason == "non-numerical");

    auto p3 = write_temp_csv("city,detector,interval,flow,occupancy\n");
    auto r3 = load_records(p3);
    CHECK(r3.records.empty());
    CHECK(r3.rejections.empty());

    CHECK_THROWS(load_records("/nonexistent/file.csv"));
    auto p4 = write_temp_csv("city,detector,flow,occupancy\nallo\n");
    CHECK_THROWS(load_records(p4));
}

TEST_CASE("load_records parses ISO-8601 and epoch intervals") {
    auto p = write_temp_csv("city,detector,interval,flow,occupancy\n"
                            "a,d1,2020-01-02T00:00:00,100,0.1\n"
                            "a,d1,1577923200,110,0.12\n");
    auto r = load_records(p);
    REQUIRE(r.records.size() == 2);
    CHECK(r.records[0].interval_start == 1577923200); // 2020-01-02 UTC
    CHECK(r.records[1].interval_start == 1577923200);
}

TEST_CASE("clean_records: the five value rules") {
    // Several detectors so the 80% coverage rules stay inert.
    std::vector<DetectorRecord> records;
    for (int d = 0; d < 5; ++d)
        for (int t = 0; t < 5; ++t) records.push_back(rec("ok" + std::to_string(d), t * 300, 500, 0.3));

    // Probes live in the fully covered interval 0 so only the value rules act.
    records.push_back(rec("ok0", 0, 3000, 0.5));  // flow>2500
    records.push_back(rec("ok1", 0, 5, 0.5));     // low flow mid occupancy
    records.push_back(rec("ok2", 0, 150, 0.96));  // high flow at high occupancy
    records.push_back(rec("ok3", 0, 90, 0.96));   // kept: only 90 veh/h at occ 0.96
    records.push_back(rec("ok4", 0, -1, 0.5));    // negative
    records.push_back(rec("ok0", 0, 500, 1.2));   // occupancy > 1

    auto res = clean_records(records);
    auto reason_of = [&](double flow, double occ) -> std::string {
        for (const auto& d : res.dropped)
            if (d.record.flow == flow && d.record.occupancy == occ) return d.reason;
        return "";
    };
    CHECK(reason_of(3000, 0.5) == "flow>2500");
    CHECK(reason_of(5, 0.5) == "flow<10 in occ∈[0.2,0.75]");
    CHECK(reason_of(150, 0.96) == "flow>100 at occ>0.95");
    CHECK(reason_of(-1, 0.5) == "negative flow or occupancy");
    CHECK(reason_of(500, 1.2) == "occupancy>1");
    bool kept_90 = false;
    for (const auto& r : res.kept)
        if (r.flow == 90 && r.occupancy == 0.96) kept_90 = true;
    CHECK(kept_90);
}

TEST_CASE("clean_records drops detectors below 80% validity and sparse intervals") {
    std::vector<DetectorRecord> records;
    // 5 detectors x 10 intervals; detector "bad" is invalid in 3 of 10.
    for (int d = 0; d < 4; ++d)
        for (int t = 0; t < 10; ++t) records.push_back(rec("g" + std::to_string(d), t * 300, 400, 0.25));
    for (int t = 0; t < 10; ++t) records.push_back(rec("bad", t * 300, t < 3 ? -5.0 : 400.0, 0.25));

    auto res = clean_records(records);
    for (const auto& r : res.kept) CHECK(r.detector != "bad");

    // One interval covered by only 2 of 4 surviving detectors disappears.
    std::vector<DetectorRecord> recs2;
    for (int d = 0; d < 4; ++d)
        for (int t = 0; t < 10; ++t) {
            if (t == 9 && d >= 2) continue;
            recs2.push_back(rec("g" + std::to_string(d), t * 300, 400, 0.25));
        }
    auto res2 = clean_records(recs2);
    for (const auto& r : res2.kept) CHECK(r.interval_start != 9 * 300);
}

TEST_CASE("clean_records is idempotent and output is a subset of input") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        auto records = random_records(rng);
        auto once = clean_records(records);
        auto twice = clean_records(once.kept);

        REQUIRE(twice.kept.size() == once.kept.size());
        for (size_t i = 0; i < once.kept.size(); ++i)
            CHECK(same_record(once.kept[i], twice.kept[i]));
        CHECK(twice.dropped.empty());

        // Subset: every kept record appears in the input.
        size_t j = 0;
        for (const auto& k : once.kept) {
            while (j < records.size() && !same_record(records[j], k)) ++j;
            REQUIRE(j < records.size());
            ++j;
        }
    }
}

TEST_CASE("aggregate: unweighted mean, 80% subset rule, errors") {
    std::vector<DetectorRecord> records{
        rec("a", 0, 400, 0.1),
        rec("b", 0, 600, 0.3),
    };
    auto s = aggregate(records, {"a", "b"});
    REQUIRE(s.points.size() == 1);
    CHECK(s.points[0].occupancy == doctest::Approx(0.2));
    CHECK(s.points[0].flow == doctest::Approx(500));

    // 10 detectors, but only 1 reports in the second interval: omitted.
    std::vector<DetectorRecord> r2;
    std::vector<std::string> subset;
    for (int d = 0; d < 10; ++d) {
        subset.push_back("d" + std::to_string(d));
        r2.push_back(rec(subset.back(), 0, 300, 0.2));
    }
    r2.push_back(rec("d0", 300, 300, 0.2));
    auto s2 = aggregate(r2, subset);
    CHECK(s2.points.size() == 1);
    auto s2b = aggregate(r2, subset, false);
    CHECK(s2b.points.size() == 2);

    CHECK_THROWS(aggregate(records, {}));
    CHECK_THROWS(aggregate(records, {"a", "zz"}));
}

TEST_CASE("aggregate over full set equals mean of aggregates over a partition") {
    // Complete data: every detector reports every interval.
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> uf(100, 900), uo(0.05, 0.6);
    std::vector<DetectorRecord> records;
    std::vector<std::string> all;
    for (int d = 0; d < 6; ++d) {
        all.push_back("d" + std::to_string(d));
        for (int t = 0; t < 8; ++t) records.push_back(rec(all.back(), t * 300, uf(rng), uo(rng)));
    }
    auto whole = aggregate(records, all);
    auto g1 = aggregate(records, {all[0], all[1], all[2]}, false);
    auto g2 = aggregate(records, {all[3], all[4], all[5]}, false);
    REQUIRE(whole.points.size() == g1.points.size());
    for (size_t i = 0; i < whole.points.size(); ++i) {
        CHECK(whole.points[i].flow ==
              doctest::Approx(0.5 * (g1.points[i].flow + g2.points[i].flow)).epsilon(1e-12));
        CHECK(whole.points[i].occupancy ==
              doctest::Approx(0.5 * (g1.points[i].occupancy + g2.points[i].occupancy)).epsilon(1e-12));
    }
}

TEST_CASE("normalize: scaling, round trip, argmax preservation, self-normalized maxima") {
    MfdSeries s;
    s.city = "c";
    s.points = {{0, 0.2, 500}, {300, 0.4, 1000}};
    auto n = normalize(s);
    CHECK(n.points[0].occupancy == doctest::Approx(0.5));
    CHECK(n.points[0].flow == doctest::Approx(0.5));
    CHECK(n.points[1].occupancy == doctest::Approx(1.0));
    CHECK(n.points[1].flow == doctest::Approx(1.0));
    REQUIRE(n.norm.has_value());
    CHECK(n.norm->flow_scale == doctest::Approx(1000));
    CHECK(n.norm->occ_scale == doctest::Approx(0.4));

    auto back = denormalize(n);
    for (size_t i = 0; i < s.points.size(); ++i) {
        CHECK(std::abs(back.points[i].flow - s.points[i].flow) < 1e-12);
        CHECK(std::abs(back.points[i].occupancy - s.points[i].occupancy) < 1e-12);
    }

    MfdSeries zero;
    zero.points = {{0, 0.0, 0.0}};
    CHECK_THROWS(normalize(zero));

    // Argmax of flow unchanged; maxima land at exactly 1.
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> uf(10, 1500), uo(0.01, 0.9);
    MfdSeries r;
    for (int i = 0; i < 50; ++i) r.points.push_back({i, uo(rng), uf(rng)});
    auto rn = normalize(r);
    size_t arg_raw = 0, arg_norm = 0;
    double fmax = 0, omax = 0;
    for (size_t i = 0; i < r.points.size(); ++i) {
        if (r.points[i].flow > r.points[arg_raw].flow) arg_raw = i;
        if (rn.points[i].flow > rn.points[arg_norm].flow) arg_norm = i;
        fmax = std::max(fmax, rn.points[i].flow);
        omax = std::max(omax, rn.points[i].occupancy);
    }
    CHECK(arg_raw == arg_norm);
    CHECK(fmax == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(omax == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("synthetic city: noiseless aggregate reproduces the generating curve") {
    SyntheticCitySpec spec;
    spec.n_detectors = 10;
    spec.days = 2;
    spec.intervals_per_day = 48;
    auto records = generate_synthetic_city(spec);
    CHECK(records.size() == 10u * 96u);

    auto cleaned = clean_records(records);
    CHECK(cleaned.dropped.empty());

    auto series = aggregate(cleaned.kept, detectors_of(cleaned.kept, spec.name));
    for (const auto& p : series.points)
        CHECK(std::abs(p.flow - synthetic_flow(spec, p.occupancy)) < 1e-9);
}

TEST_CASE("synthetic city: fixed seed reproduces identical records") {
    SyntheticCitySpec spec;
    spec.noise_sigma = 30;
    spec.detector_bias_sigma = 0.1;
    spec.seed = 42;
    spec.n_detectors = 8;
    spec.intervals_per_day = 24;
    auto a = generate_synthetic_city(spec);
    auto b = generate_synthetic_city(spec);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(same_record(a[i], b[i]));
}

TEST_CASE("biased bundles: reproducible, correct subset sizes, distinct replicas") {
    SyntheticCitySpec spec;
    spec.n_detectors = 120;
    spec.intervals_per_day = 24;
    spec.detector_bias_sigma = 0.1;
    spec.noise_sigma = 20;
    spec.seed = 3;
    auto records = generate_synthetic_city(spec);

    auto b1 = make_biased_bundles(records, spec.name, 75, 5, 11);
    auto b2 = make_biased_bundles(records, spec.name, 75, 5, 11);
    REQUIRE(b1.replicas.size() == 5);
    std::set<std::vector<std::string>> subsets;
    for (size_t i = 0; i < b1.replicas.size(); ++i) {
        CHECK(b1.replicas[i].detector_subset.size() == 75);
        subsets.insert(b1.replicas[i].detector_subset);
        CHECK(b1.replicas[i].detector_subset == b2.replicas[i].detector_subset);
        REQUIRE(b1.replicas[i].points.size() == b2.replicas[i].points.size());
        for (size_t j = 0; j < b1.replicas[i].points.size(); ++j) {
            CHECK(b1.replicas[i].points[j].flow == b2.replicas[i].points[j].flow);
            CHECK(b1.replicas[i].points[j].occupancy == b2.replicas[i].points[j].occupancy);
        }
    }
    CHECK(subsets.size() == 5); // no repeats

    // Indexed replica aggregation matches the reference aggregate() exactly.
    auto cleaned_for_ref = b1.replicas[0];
    auto reference = aggregate(records, cleaned_for_ref.detector_subset);
    REQUIRE(reference.points.size() == cleaned_for_ref.points.size());
    for (size_t j = 0; j < reference.points.size(); ++j) {
        CHECK(reference.points[j].flow == cleaned_for_ref.points[j].flow);
        CHECK(reference.points[j].occupancy == cleaned_for_ref.points[j].occupancy);
        CHECK(reference.points[j].interval_start == cleaned_for_ref.points[j].interval_start);
    }

    // Eligibility violations.
    SyntheticCitySpec small = spec;
    small.n_detectors = 50;
    auto small_records = generate_synthetic_city(small);
    CHECK_THROWS(make_biased_bundles(small_records, small.name, 10, 5, 1));

    SyntheticCitySpec one_day = spec;
    one_day.days = 1;
    auto one_day_records = generate_synthetic_city(one_day);
    CHECK_THROWS(make_biased_bundles(one_day_records, one_day.name, 10, 5, 1));
}

TEST_CASE("smaller subsets spread wider around the true curve") {
    SyntheticCitySpec spec;
    spec.n_detectors = 110;
    spec.intervals_per_day = 48;
    spec.detector_bias_sigma = 0.12;
    spec.noise_sigma = 25;
    spec.seed = 17;
    auto records = generate_synthetic_city(spec);

    auto spread = [&](int n) {
        auto bundle = make_biased_bundles(records, spec.name, n, 8, 5);
        double acc = 0;
        size_t count = 0;
        for (const auto& rep : bundle.replicas)
            for (const auto& p : rep.points) {
                const double d = p.flow - synthetic_flow(spec, p.occupancy);
                acc += d * d;
                ++count;
            }
        return std::sqrt(acc / static_cast<double>(count));
    };
    CHECK(spread(10) > spread(75));
}

TEST_CASE("series round-trips through csv + sidecar") {
    MfdSeries s;
    s.city = "roundtrip";
    s.detector_subset = {"a", "b"};
    s.points = {{0, 0.125, 431.25}, {300, 0.25, 862.5}, {600, 0.5, 900.0}};
    s.norm = NormScales{1000.0, 0.5};
    auto path = (std::filesystem::temp_directory_path() / "mfd_series_rt.csv").string();
    write_series(s, path, 7);
    auto r = read_series(path);
    CHECK(r.city == s.city);
    CHECK(r.detector_subset == s.detector_subset);
    REQUIRE(r.points.size() == s.points.size());
    for (size_t i = 0; i < s.points.size(); ++i) {
        CHECK(r.points[i].flow == s.points[i].flow);
        CHECK(r.points[i].occupancy == s.points[i].occupancy);
        CHECK(r.points[i].interval_start == s.points[i].interval_start);
    }
    REQUIRE(r.norm.has_value());
    CHECK(r.norm->flow_scale == 1000.0);
}
