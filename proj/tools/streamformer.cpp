// streamformer: cost reports, grid enumeration, latency benchmarks and
// oracle self-checks.
//
// Exit codes: 0 ok, 1 check or constraint failure, 2 usage/parse error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "streamformer/streamformer.hpp"

namespace sf = streamformer;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write '" + path + "'");
    out << text;
}

sf::ConfigFile load_config_or_usage(const std::string& path) {
    try {
        return sf::load_config(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

int cmd_cost(const std::string& config_path, const std::string& csv_path) {
    const sf::ConfigFile cfg = load_config_or_usage(config_path);
    const sf::CostReport r = sf::cost_report(cfg.encoder);
    std::cout << "config            " << cfg.name << "\n" << sf::cost_report_text(r);
    std::cout << "size budget       " << (r.params < sf::kSizeBudget ? "within" : "EXCEEDED") << " (" << sf::kSizeBudget
              << ")\n"
              << "flops budget      " << (r.flops_per_frame < sf::kFlopsBudget ? "within" : "EXCEEDED") << " ("
              << sf::kFlopsBudget << ")\n";
    for (const auto& w : cfg.encoder.warnings()) std::cout << "warning: " << w << "\n";
    if (cfg.cascade) {
        std::cout << "cascade params    " << sf::count_params(*cfg.cascade, cfg.encoder.model_dim) << "\n"
                  << "cascade lookahead " << cfg.cascade->total_lookahead() << " frames\n";
    }
    if (!csv_path.empty()) write_file(csv_path, sf::cost_report_csv(r));
    return kOk;
}

int cmd_grid(const std::string& grid_path, const std::string& csv_path, double slack) {
    std::vector<sf::GridEntry> entries;
    try {
        entries = sf::load_grid(grid_path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
    if (entries.empty()) {
        std::cerr << "error: no configs in '" << grid_path << "'\n";
        write_file(csv_path, sf::grid_csv({}));
        return kCheckFailed;
    }
    const auto rows = sf::grid_report(entries, slack);
    std::cout << sf::grid_text(rows);
    write_file(csv_path, sf::grid_csv(rows));
    bool any_invalid = false;
    for (const auto& r : rows) any_invalid = any_invalid || !r.valid;
    return any_invalid ? kCheckFailed : kOk;
}

bool looks_like_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) return false;
    try {
        const auto j = nlohmann::json::parse(in);
        return j.is_object() && j.contains("p50_us");
    } catch (const std::exception&) {
        return false;
    }
}

sf::LatencyReport report_for(const std::string& path) {
    if (!std::ifstream(path)) throw UsageError("cannot open '" + path + "'");
    if (looks_like_report(path)) {
        std::ifstream in(path);
        try {
            return sf::latency_report_from_json(nlohmann::json::parse(in));
        } catch (const std::exception& e) {
            throw UsageError(path + ": " + e.what());
        }
    }
    return sf::run_bench(sf::bench_spec_from(load_config_or_usage(path)));
}

int cmd_bench(const std::string& config_path, const std::string& json_path, const std::vector<std::string>& compare) {
    const sf::ConfigFile cfg = load_config_or_usage(config_path);
    for (const auto& p : compare)
        if (!std::ifstream(p)) throw UsageError("cannot open '" + p + "'");
    const sf::LatencyReport main = sf::run_bench(sf::bench_spec_from(cfg));
    std::cout << sf::latency_text(main);
    if (!json_path.empty()) write_file(json_path, sf::to_json(main).dump(2) + "\n");
    if (!compare.empty()) {
        std::vector<sf::LatencyReport> reports{main};
        for (const auto& p : compare) reports.push_back(report_for(p));
        std::cout << "\n" << sf::comparison_text(sf::compare(reports));
    }
    return kOk;
}

int cmd_verify(const std::string& level) {
    bool ok = true;
    for (const auto& r : sf::verify::run_all(sf::verify::parse_level(level))) {
        std::cout << sf::verify::format_result(r) << std::endl;
        ok = ok && r.passed;
    }
    std::cout << (ok ? "verify: all suites passed" : "verify: FAILED") << "\n";
    return ok ? kOk : kCheckFailed;
}

void apply_fault_env() {
    const char* fault = std::getenv("STREAMFORMER_FAULT");
    if (!fault || !*fault) return;
    if (std::string(fault) != "performer_norm") throw UsageError(std::string("unknown STREAMFORMER_FAULT '") + fault + "'");
    sf::set_performer_normalization_fault(true);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming conformer encoder toolkit"};
    app.require_subcommand(1);

    std::string config_path, csv_path, grid_path, json_path, level = "fast";
    double slack = 0.0;
    std::vector<std::string> compare;

    auto* cost = app.add_subcommand("cost", "Print parameter, flop and state counts for a config");
    cost->add_option("--config", config_path, "Config file")->required();
    cost->add_option("--csv", csv_path, "Write the per-module breakdown as CSV");

    auto* grid = app.add_subcommand("grid", "Evaluate every variant of a grid file against the budgets");
    grid->add_option("--grid", grid_path, "Grid file")->required();
    grid->add_option("--csv", csv_path, "Output CSV")->required();
    grid->add_option("--slack", slack, "Relative budget slack, e.g. 0.2")->check(CLI::NonNegativeNumber);

    auto* bench = app.add_subcommand("bench", "Measure per-step streaming latency");
    bench->add_option("--config", config_path, "Config file")->required();
    bench->add_option("--json", json_path, "Write the report as JSON");
    bench->add_option("--compare", compare, "Configs or report JSONs to compare against")->expected(1, -1);

    auto* verify = app.add_subcommand("verify", "Run the oracle self-check suites");
    verify->add_option("--level", level, "fast or full")->check(CLI::IsMember({"fast", "full"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        apply_fault_env();
        if (*cost) return cmd_cost(config_path, csv_path);
        if (*grid) return cmd_grid(grid_path, csv_path, slack);
        if (*bench) return cmd_bench(config_path, json_path, compare);
        if (*verify) return cmd_verify(level);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const sf::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kCheckFailed;
    }
    return kUsage;
}
