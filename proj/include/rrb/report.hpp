#pragma once

#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rrb/pipeline.hpp"

namespace rrb {

inline std::vector<MetricReport> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::missing_field, "cannot open report '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) raise(Errc::parse_error, "'" + path + "': empty file");
    if (trim(line) != "ad_id,k,delta_mrr,delta_dir_pp,eligible_count")
        raise(Errc::parse_error, "'" + path + "': unexpected header");
    std::vector<MetricReport> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != 5)
            raise(Errc::parse_error,
                  "'" + path + "' line " + std::to_string(line_no) + ": expected 5 fields");
        MetricReport row;
        try {
            row.ad_id = fields[0];
            row.k = std::stoul(fields[1]);
            row.delta_mrr = std::stod(fields[2]);
            if (!trim(fields[3]).empty()) row.delta_dir_pp = std::stod(fields[3]);
            row.eligible_query_count = std::stoul(fields[4]);
        } catch (const std::exception&) {
            raise(Errc::parse_error,
                  "'" + path + "' line " + std::to_string(line_no) + ": bad number");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace detail {

inline std::vector<AggregateSummary> aggregate_by_k(const std::vector<MetricReport>& rows) {
    std::map<std::size_t, std::vector<MetricReport>> by_k;
    for (const auto& row : rows) by_k[row.k].push_back(row);
    std::vector<AggregateSummary> out;
    for (const auto& [k, group] : by_k) out.push_back(aggregate(group));
    return out;
}

inline std::string cell(const std::optional<double>& v) {
    if (!v) return "   absent";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%9.4f", *v);
    return buf;
}

}  // namespace detail

/// Render one or more metric CSVs as an aligned side-by-side table and emit
/// per-run (k, metric) series suitable for external plotting.
inline void cmd_report(const std::vector<std::string>& csv_paths,
                       std::vector<std::string> labels, const std::string& out_dir,
                       std::ostream& os = std::cout) {
    if (csv_paths.empty()) {
        os << "no data\n";
        return;
    }
    while (labels.size() < csv_paths.size())
        labels.push_back("run" + std::to_string(labels.size() + 1));

    std::vector<std::vector<AggregateSummary>> per_run;
    std::set<std::size_t> all_k;
    for (const auto& path : csv_paths) {
        per_run.push_back(detail::aggregate_by_k(read_metrics_csv(path)));
        for (const auto& agg : per_run.back()) all_k.insert(agg.k);
    }

    os << std::left << std::setw(6) << "k";
    for (std::size_t r = 0; r < per_run.size(); ++r)
        os << "| " << std::setw(21) << (labels[r] + " dMRR/dDIRpp");
    os << "\n";
    for (const std::size_t k : all_k) {
        os << std::left << std::setw(6) << k;
        for (const auto& run : per_run) {
            const AggregateSummary* found = nullptr;
            for (const auto& agg : run)
                if (agg.k == k) found = &agg;
            if (found == nullptr) {
                os << "| " << std::setw(21) << "-";
                continue;
            }
            char mrr[32];
            std::snprintf(mrr, sizeof(mrr), "%9.4f", found->mean_delta_mrr);
            os << "| " << mrr << " " << std::setw(11) << detail::cell(found->mean_delta_dir_pp);
        }
        os << "\n";
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        for (std::size_t r = 0; r < per_run.size(); ++r) {
            std::ofstream out(out_dir + "/" + labels[r] + "_series.csv", std::ios::trunc);
            out << "k,mean_delta_mrr,mean_delta_dir_pp\n";
            for (const auto& agg : per_run[r]) {
                out << agg.k << "," << detail::format_double(agg.mean_delta_mrr) << ","
                    << (agg.mean_delta_dir_pp ? detail::format_double(*agg.mean_delta_dir_pp) : "")
                    << "\n";
            }
        }
    }
}

}  // namespace rrb
