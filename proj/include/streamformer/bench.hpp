#pragma once

// Per-step streaming latency harness.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#if defined(__linux__)
#include <sched.h>
#include <unistd.h>
#endif

#include "streamformer/costmodel.hpp"
#include "streamformer/streaming.hpp"

namespace streamformer {

enum class Precision { f32, f64 };

inline Precision parse_precision(std::string_view s) {
    if (s == "32" || s == "f32" || s == "float32") return Precision::f32;
    if (s == "64" || s == "f64" || s == "float64") return Precision::f64;
    throw std::invalid_argument("unknown precision '" + std::string(s) + "' (expected 32 or 64)");
}

inline std::string to_string(Precision p) { return p == Precision::f32 ? "32" : "64"; }

struct BenchSpec {
    EncoderConfig config;
    std::string label = "run";
    std::size_t total_frames = 256;
    std::size_t chunk_size = 1;
    std::size_t warmup_steps = 32;
    std::size_t measured_steps = 128;
    std::uint64_t seed = 0;
    Precision precision = Precision::f32;
    bool timing = true; // false runs the identical computation without clocks

    void validate() const {
        config.validate();
        if (total_frames == 0) throw std::invalid_argument("bench: total_frames must be >= 1");
        if (chunk_size == 0) throw std::invalid_argument("bench: chunk_size must be >= 1");
        if (measured_steps == 0) throw std::invalid_argument("bench: measured_steps must be >= 1");
    }
};

struct LatencyReport {
    std::string label;
    double p50_us = 0, p90_us = 0, p99_us = 0, mean_us = 0;
    std::size_t steps = 0;
    std::size_t chunk_size = 0;
    std::string precision;
    std::string config_digest;
    CostReport cost;
    std::string host;
    std::uint64_t output_checksum = 0;
};

inline std::string host_fingerprint() {
    std::string host = "unknown-host";
#if defined(__linux__)
    char name[256] = {};
    if (gethostname(name, sizeof(name) - 1) == 0) host = name;
#endif
    std::ostringstream out;
    out << host << "/cpus=" << std::thread::hardware_concurrency() << "/";
#if defined(__clang__)
    out << "clang-" << __clang_major__ << "." << __clang_minor__;
#elif defined(__GNUC__)
    out << "gcc-" << __GNUC__ << "." << __GNUC_MINOR__;
#else
    out << "cxx";
#endif
    return out.str();
}

// Nearest-rank percentile of an ascending sample.
inline double percentile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) return 0;
    const auto rank = std::size_t(std::ceil(p / 100.0 * double(sorted.size())));
    return sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)];
}

inline std::string hex_digest(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << v;
    return out.str();
}

namespace detail {

// Best effort: keep the timed region on the CPU it started on.
inline void pin_to_current_cpu() {
#if defined(__linux__)
    const int cpu = sched_getcpu();
    if (cpu < 0) return;
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(cpu, &set);
    sched_setaffinity(0, sizeof(set), &set);
#endif
}

template <typename T>
std::uint64_t checksum_rows(const Matrix<T>& m, std::uint64_t h) {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(T)), h);
}

template <typename T>
LatencyReport run_bench_typed(const BenchSpec& spec) {
    EncoderConfig cfg = spec.config;
    cfg.seed = spec.seed;
    const EncoderWeights<T> weights = init_weights<T>(cfg);
    Rng input_rng(spec.seed ^ 0x5eed5eed5eed5eedULL);
    const Matrix<T> frames = input_rng.gaussian_matrix<T>(spec.total_frames, cfg.input_dim);

    const std::size_t total_steps = (spec.total_frames + spec.chunk_size - 1) / spec.chunk_size;
    const std::size_t warmup = std::min(spec.warmup_steps, total_steps - 1);
    const std::size_t measured = std::min(spec.measured_steps, total_steps - warmup);

    if (spec.timing) pin_to_current_cpu();
    StreamState<T> state = init_state<T>(cfg);
    std::vector<double> durations;
    durations.reserve(measured);
    std::uint64_t checksum = 0xcbf29ce484222325ULL;
    for (std::size_t s = 0; s < warmup + measured; ++s) {
        const std::size_t begin = s * spec.chunk_size;
        const std::size_t end = std::min(spec.total_frames, begin + spec.chunk_size);
        const Matrix<T> chunk = frames.slice_rows(begin, end);
        Matrix<T> out;
        if (spec.timing) {
            const auto t0 = std::chrono::steady_clock::now();
            out = step(state, chunk, weights, cfg);
            const auto t1 = std::chrono::steady_clock::now();
            const double us = std::chrono::duration<double, std::micro>(t1 - t0).count();
            if (us < 0) throw std::logic_error("bench: negative step duration");
            if (s >= warmup) durations.push_back(us);
        } else {
            out = step(state, chunk, weights, cfg);
            if (s >= warmup) durations.push_back(0.0);
        }
        checksum = checksum_rows(out, checksum);
    }

    LatencyReport r;
    r.label = spec.label;
    r.steps = durations.size();
    r.chunk_size = spec.chunk_size;
    r.precision = to_string(spec.precision);
    r.config_digest = hex_digest(config_digest(cfg));
    r.cost = cost_report(cfg);
    r.host = host_fingerprint();
    r.output_checksum = checksum;
    std::vector<double> sorted = durations;
    std::sort(sorted.begin(), sorted.end());
    r.p50_us = percentile(sorted, 50);
    r.p90_us = percentile(sorted, 90);
    r.p99_us = percentile(sorted, 99);
    double total = 0;
    for (double d : durations) total += d;
    r.mean_us = durations.empty() ? 0 : total / double(durations.size());
    return r;
}

} // namespace detail

// Seeded synthetic frames streamed through step(); warmup steps are run but
// not recorded.
inline LatencyReport run_bench(const BenchSpec& spec) {
    spec.validate();
    return spec.precision == Precision::f32 ? detail::run_bench_typed<float>(spec)
                                            : detail::run_bench_typed<double>(spec);
}

// ─── Comparison ──────────────────────────────────────────────────────────────

struct ComparisonRow {
    std::string label;
    double mean_us = 0;
    double speedup = 1;     // baseline mean / this mean
    double p50_speedup = 1; // baseline p50 / this p50
    double size_ratio = 1;  // baseline params / these params
    double flops_ratio = 1;
    double states_ratio = 1;
};

inline std::vector<ComparisonRow> compare(const std::vector<LatencyReport>& reports) {
    if (reports.size() < 2) throw std::invalid_argument("compare: need at least two reports");
    const LatencyReport& base = reports.front();
    auto ratio = [](double num, double den) { return den > 0 ? num / den : 0.0; };
    std::vector<ComparisonRow> rows;
    for (const auto& r : reports) {
        ComparisonRow row;
        row.label = r.label;
        row.mean_us = r.mean_us;
        row.speedup = ratio(base.mean_us, r.mean_us);
        row.p50_speedup = ratio(base.p50_us, r.p50_us);
        row.size_ratio = ratio(double(base.cost.params), double(r.cost.params));
        row.flops_ratio = ratio(double(base.cost.flops_per_frame), double(r.cost.flops_per_frame));
        row.states_ratio = ratio(double(base.cost.states_per_frame), double(r.cost.states_per_frame));
        rows.push_back(row);
    }
    return rows;
}

inline std::string comparison_text(const std::vector<ComparisonRow>& rows) {
    std::ostringstream out;
    out << std::left << std::setw(16) << "encoder" << std::right << std::setw(12) << "mean(us)" << std::setw(10)
        << "speedup" << std::setw(10) << "p50x" << std::setw(10) << "size x" << std::setw(10) << "flops x"
        << std::setw(10) << "states x" << '\n';
    out << std::fixed << std::setprecision(2);
    for (const auto& r : rows) {
        out << std::left << std::setw(16) << r.label << std::right << std::setw(12) << r.mean_us << std::setw(10)
            << r.speedup << std::setw(10) << r.p50_speedup << std::setw(10) << r.size_ratio << std::setw(10)
            << r.flops_ratio << std::setw(10) << r.states_ratio << '\n';
    }
    out << "note: speedups are host-relative CPU measurements, not TPU latencies\n";
    return out.str();
}

// ─── Serialization ───────────────────────────────────────────────────────────

inline nlohmann::json to_json(const CostReport& c) {
    return {{"params", c.params},
            {"flops_per_frame", c.flops_per_frame},
            {"states_per_frame", c.states_per_frame},
            {"states_physical", c.states_physical}};
}

inline nlohmann::json to_json(const LatencyReport& r) {
    return {{"label", r.label},
            {"p50_us", r.p50_us},
            {"p90_us", r.p90_us},
            {"p99_us", r.p99_us},
            {"mean_us", r.mean_us},
            {"steps", r.steps},
            {"chunk_size", r.chunk_size},
            {"precision", r.precision},
            {"config_digest", r.config_digest},
            {"cost", to_json(r.cost)},
            {"host", r.host},
            {"output_checksum", hex_digest(r.output_checksum)}};
}

inline LatencyReport latency_report_from_json(const nlohmann::json& j) {
    LatencyReport r;
    r.label = j.at("label").get<std::string>();
    r.p50_us = j.at("p50_us").get<double>();
    r.p90_us = j.at("p90_us").get<double>();
    r.p99_us = j.at("p99_us").get<double>();
    r.mean_us = j.at("mean_us").get<double>();
    r.steps = j.at("steps").get<std::size_t>();
    r.chunk_size = j.value("chunk_size", std::size_t(0));
    r.precision = j.value("precision", std::string());
    r.config_digest = j.at("config_digest").get<std::string>();
    const auto& c = j.at("cost");
    r.cost.params = c.at("params").get<std::uint64_t>();
    r.cost.flops_per_frame = c.at("flops_per_frame").get<std::uint64_t>();
    r.cost.states_per_frame = c.at("states_per_frame").get<std::uint64_t>();
    r.cost.states_physical = c.value("states_physical", std::uint64_t(0));
    r.host = j.value("host", std::string());
    r.output_checksum = std::stoull(j.value("output_checksum", std::string("0")), nullptr, 16);
    return r;
}

inline std::string latency_csv(const std::vector<LatencyReport>& reports) {
    std::ostringstream out;
    out << "label,p50_us,p90_us,p99_us,mean_us,steps,config_digest,params,flops_per_frame,states_per_frame,host\n";
    for (const auto& r : reports) {
        out << r.label << ',' << r.p50_us << ',' << r.p90_us << ',' << r.p99_us << ',' << r.mean_us << ',' << r.steps
            << ',' << r.config_digest << ',' << r.cost.params << ',' << r.cost.flops_per_frame << ','
            << r.cost.states_per_frame << ',' << r.host << '\n';
    }
    return out.str();
}

inline std::string latency_text(const LatencyReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(1);
    out << "label          " << r.label << "\n"
        << "steps          " << r.steps << " (chunk " << r.chunk_size << ", " << r.precision << "-bit)\n"
        << "p50/p90/p99    " << r.p50_us << " / " << r.p90_us << " / " << r.p99_us << " us\n"
        << "mean           " << r.mean_us << " us\n"
        << "params         " << r.cost.params << "\n"
        << "flops/frame    " << r.cost.flops_per_frame << "\n"
        << "states/frame   " << r.cost.states_per_frame << "\n"
        << "config digest  " << r.config_digest << "\n"
        << "host           " << r.host << "\n"
        << "checksum       " << hex_digest(r.output_checksum) << "\n";
    return out.str();
}

// ─── Complexity probes ───────────────────────────────────────────────────────

// Median step time (us) of single-frame streaming steps at the requested
// stream positions. Each sample is the median over `window` consecutive steps
// starting at the position.
template <typename T>
std::vector<double> position_latency(const EncoderConfig& cfg, const std::vector<std::size_t>& positions,
                                     std::size_t window = 64) {
    const EncoderWeights<T> w = init_weights<T>(cfg);
    StreamState<T> state = init_state<T>(cfg);
    Rng rng(cfg.seed + 17);
    const std::size_t last = *std::max_element(positions.begin(), positions.end()) + window;
    std::vector<double> per_step(last, 0.0);
    Matrix<T> frame(1, cfg.input_dim);
    detail::pin_to_current_cpu();
    for (std::size_t s = 0; s < last; ++s) {
        for (auto& v : frame.values()) v = T(rng.gaussian());
        const auto t0 = std::chrono::steady_clock::now();
        const Matrix<T> out = step(state, frame, w, cfg);
        const auto t1 = std::chrono::steady_clock::now();
        per_step[s] = std::chrono::duration<double, std::micro>(t1 - t0).count();
    }
    std::vector<double> medians;
    for (std::size_t p : positions) {
        std::vector<double> slice(per_step.begin() + std::ptrdiff_t(p), per_step.begin() + std::ptrdiff_t(p + window));
        std::sort(slice.begin(), slice.end());
        medians.push_back(slice[slice.size() / 2]);
    }
    return medians;
}

// Best-of-`repeats` wall time (seconds) of fn().
template <typename Fn>
double best_time(Fn&& fn, int repeats = 3) {
    double best = 1e300;
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

} // namespace streamformer
