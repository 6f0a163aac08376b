#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pdeseq/experiments.hpp"
#include "pdeseq/stats.hpp"

namespace pdeseq {

// ---------------------------------------------------------------------------
// metrics.csv
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string run_id;
    std::string axis_name;
    double axis_value = 0.0;
    std::size_t token_count = 0;
    std::string metric; // e.g. rmse.llm, maxae.ftcs, entropy.llm, delta_e.reference
    double mean = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::size_t m_effective = 0;
    Scale scale = Scale::Linear;
};

namespace report_detail {

inline MetricRow aggregate_row(const std::string& run_id, const std::string& axis_name,
                               double axis_value, std::size_t tokens, const std::string& metric,
                               std::vector<double> values, bool prefer_log) {
    Scale scale = Scale::Linear;
    if (prefer_log &&
        std::all_of(values.begin(), values.end(), [](double v) { return v > 0.0; }))
        scale = Scale::Log10;
    const Aggregate agg = aggregate_ci(values, scale);
    return {run_id, axis_name, axis_value, tokens, metric,
            agg.mean, agg.lo,   agg.hi,    agg.n,  scale};
}

// Per-trial values: one number per trial, averaging over generations when a
// trial has several. Collapses to per-generation values when only one trial
// contributed (the Fig.-4-left style aggregation).
inline std::vector<double> per_trial(const std::map<std::size_t, std::vector<double>>& by_trial) {
    if (by_trial.size() == 1) return by_trial.begin()->second;
    std::vector<double> out;
    for (const auto& [trial, values] : by_trial) {
        double mean = 0.0;
        for (double v : values) mean += v;
        out.push_back(mean / static_cast<double>(values.size()));
    }
    return out;
}

} // namespace report_detail

/// Aggregate a run's records into the flat metric table. Only ok records
/// enter; m_effective reports how many values fed each row.
inline std::vector<MetricRow> compute_metrics(const std::vector<TrialRecord>& records,
                                              const ExperimentConfig& cfg,
                                              const std::string& run_id) {
    using report_detail::aggregate_row;
    using report_detail::per_trial;

    std::vector<MetricRow> rows;
    std::vector<const TrialRecord*> ok;
    for (const auto& r : records)
        if (r.ok) ok.push_back(&r);
    if (ok.empty()) return rows;

    const std::string exp = cfg.experiment_name();

    if (exp == "one_step_context" || exp == "one_step_output") {
        std::map<std::size_t, std::vector<const TrialRecord*>> by_axis;
        for (const auto* r : ok) by_axis[r->axis_value].push_back(r);

        for (const auto& [axis, group] : by_axis) {
            const auto& g0 = *group.front();
            const std::string axis_name = g0.axis_name;
            const std::size_t tokens = axis_name == "n_t"
                                           ? token_count(g0.grid.n_t, g0.grid.n_x)
                                           : token_count(1, g0.grid.n_x);

            auto collect = [&](auto&& fn) {
                std::vector<double> v;
                for (const auto* r : group) v.push_back(fn(*r));
                return v;
            };

            rows.push_back(aggregate_row(run_id, axis_name, static_cast<double>(axis), tokens,
                                         "rmse.llm", collect([](const TrialRecord& r) {
                                             return rmse_per_step(r.predicted, r.reference)[0];
                                         }),
                                         true));
            rows.push_back(aggregate_row(run_id, axis_name, static_cast<double>(axis), tokens,
                                         "maxae.llm", collect([](const TrialRecord& r) {
                                             return maxae_per_step(r.predicted, r.reference)[0];
                                         }),
                                         true));
            for (const auto& [name, unused] : g0.baselines) {
                const std::string scheme = name;
                rows.push_back(aggregate_row(
                    run_id, axis_name, static_cast<double>(axis), tokens, "rmse." + scheme,
                    collect([&scheme](const TrialRecord& r) {
                        return rmse_per_step(r.baselines.at(scheme), r.reference)[0];
                    }),
                    true));
                rows.push_back(aggregate_row(
                    run_id, axis_name, static_cast<double>(axis), tokens, "maxae." + scheme,
                    collect([&scheme](const TrialRecord& r) {
                        return maxae_per_step(r.baselines.at(scheme), r.reference)[0];
                    }),
                    true));
            }
            rows.push_back(aggregate_row(run_id, axis_name, static_cast<double>(axis), tokens,
                                         "rmse.floor",
                                         collect([](const TrialRecord& r) { return r.floor_rmse[0]; }),
                                         true));
            rows.push_back(aggregate_row(run_id, axis_name, static_cast<double>(axis), tokens,
                                         "maxae.floor",
                                         collect([](const TrialRecord& r) { return r.floor_maxae[0]; }),
                                         true));

            std::vector<double> entropy;
            for (const auto* r : group)
                if (!r->entropy_per_step.empty()) entropy.push_back(r->entropy_per_step[0]);
            if (!entropy.empty())
                rows.push_back(aggregate_row(run_id, axis_name, static_cast<double>(axis), tokens,
                                             "entropy.llm", std::move(entropy), false));
        }
        return rows;
    }

    // multi_step / energy: axis is the prediction step n = 1..P
    const std::size_t n_x = ok.front()->grid.n_x;
    const std::size_t steps = ok.front()->predicted.cols();

    for (std::size_t n = 1; n <= steps; ++n) {
        const std::size_t tokens = token_count(n, n_x);
        const std::size_t col = n - 1;

        auto column_rmse = [col](const TrialRecord& r) {
            return rmse_per_step(r.predicted, r.reference)[col];
        };
        auto column_maxae = [col](const TrialRecord& r) {
            return maxae_per_step(r.predicted, r.reference)[col];
        };

        for (const auto& metric :
             std::vector<std::pair<std::string, std::function<double(const TrialRecord&)>>>{
                 {"rmse.llm", column_rmse}, {"maxae.llm", column_maxae}}) {
            std::vector<double> values;
            if (cfg.averaged_prediction) {
                // mean prediction per trial, then the error of the mean
                std::map<std::size_t, std::pair<Matrix<double>, std::size_t>> sums;
                for (const auto* r : ok) {
                    auto& [sum, count] = sums[r->trial];
                    if (count == 0) {
                        sum = r->predicted;
                    } else {
                        for (std::size_t idx = 0; idx < sum.data().size(); ++idx)
                            sum.data()[idx] += r->predicted.data()[idx];
                    }
                    ++count;
                }
                for (auto& [trial, entry] : sums) {
                    auto& [sum, count] = entry;
                    for (double& v : sum.data()) v /= static_cast<double>(count);
                    const TrialRecord* sample = nullptr;
                    for (const auto* r : ok)
                        if (r->trial == trial) {
                            sample = r;
                            break;
                        }
                    TrialRecord merged = *sample;
                    merged.predicted = sum;
                    values.push_back(metric.second(merged));
                }
            } else {
                std::map<std::size_t, std::vector<double>> by_trial;
                for (const auto* r : ok) by_trial[r->trial].push_back(metric.second(*r));
                values = per_trial(by_trial);
            }
            rows.push_back(aggregate_row(run_id, "step", static_cast<double>(n), tokens,
                                         metric.first, std::move(values), true));
        }

        for (const auto& [name, unused] : ok.front()->baselines) {
            const std::string scheme = name;
            std::map<std::size_t, std::vector<double>> by_trial;
            for (const auto* r : ok)
                if (r->generation == 0)
                    by_trial[r->trial].push_back(
                        rmse_per_step(r->baselines.at(scheme), r->reference)[col]);
            rows.push_back(aggregate_row(run_id, "step", static_cast<double>(n), tokens,
                                         "rmse." + scheme, per_trial(by_trial), true));
        }

        {
            std::map<std::size_t, std::vector<double>> by_trial;
            for (const auto* r : ok)
                if (r->generation == 0) by_trial[r->trial].push_back(r->floor_rmse[col]);
            rows.push_back(aggregate_row(run_id, "step", static_cast<double>(n), tokens,
                                         "rmse.floor", per_trial(by_trial), true));
        }

        {
            std::map<std::size_t, std::vector<double>> by_trial;
            for (const auto* r : ok)
                if (!r->entropy_per_step.empty())
                    by_trial[r->trial].push_back(r->entropy_per_step[col]);
            if (!by_trial.empty())
                rows.push_back(aggregate_row(run_id, "step", static_cast<double>(n), tokens,
                                             "entropy.llm", per_trial(by_trial), false));
        }

        if (exp == "energy") {
            auto energy_rows = [&](const std::string& metric, auto&& fn) {
                std::map<std::size_t, std::vector<double>> by_trial;
                for (const auto* r : ok) {
                    const std::vector<double>& v = fn(*r);
                    if (!v.empty()) by_trial[r->trial].push_back(v[col]);
                }
                if (!by_trial.empty())
                    rows.push_back(aggregate_row(run_id, "step", static_cast<double>(n), tokens,
                                                 metric, per_trial(by_trial), true));
            };
            energy_rows("delta_e.llm",
                        [](const TrialRecord& r) -> const std::vector<double>& { return r.delta_e; });
            for (const auto& [name, unused] : ok.front()->baseline_delta_e) {
                const std::string scheme = name;
                energy_rows("delta_e." + scheme,
                            [&scheme](const TrialRecord& r) -> const std::vector<double>& {
                                return r.baseline_delta_e.at(scheme);
                            });
            }
            energy_rows("delta_e.reference", [](const TrialRecord& r) -> const std::vector<double>& {
                return r.reference_delta_e;
            });
        }
    }
    return rows;
}

inline void write_metrics_csv(const std::vector<MetricRow>& rows, std::ostream& os) {
    os << "run_id,axis_name,axis_value,token_count,metric,mean,ci_lo,ci_hi,m_effective,scale\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << r.run_id << ',' << r.axis_name << ',' << r.axis_value << ',' << r.token_count << ','
           << r.metric << ',' << r.mean << ',' << r.ci_lo << ',' << r.ci_hi << ','
           << r.m_effective << ',' << scale_name(r.scale) << '\n';
}

inline std::vector<MetricRow> read_metrics_csv(std::istream& is) {
    std::vector<MetricRow> rows;
    std::string line;
    bool header = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        std::vector<std::string> parts;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) parts.push_back(field);
        if (parts.size() != 10) throw ConfigError("metrics.csv: malformed row: " + line);
        MetricRow r;
        r.run_id = parts[0];
        r.axis_name = parts[1];
        r.axis_value = std::stod(parts[2]);
        r.token_count = static_cast<std::size_t>(std::stoull(parts[3]));
        r.metric = parts[4];
        r.mean = std::stod(parts[5]);
        r.ci_lo = std::stod(parts[6]);
        r.ci_hi = std::stod(parts[7]);
        r.m_effective = static_cast<std::size_t>(std::stoull(parts[8]));
        r.scale = parts[9] == "log10" ? Scale::Log10 : Scale::Linear;
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// plotdata
// ---------------------------------------------------------------------------

/// Figure families; each writes one or more plain CSVs under out_dir.
/// The metric-curve figures are pure functions of metrics.csv; the
/// diagnostic figures (temporal-diff, error-correlates, topk) read
/// records.jsonl, and temporal-diff recomputes the reference from the
/// recorded IC provenance.
inline const std::vector<std::string>& plot_figures() {
    static const std::vector<std::string> figures{
        "error-vs-nt",  "error-vs-nx",      "rollout-error", "entropy-vs-nt", "entropy-vs-nx",
        "entropy-vs-step", "delta-e",       "temporal-diff", "error-correlates", "topk"};
    return figures;
}

namespace report_detail {

inline void write_curve_csv(const std::vector<MetricRow>& rows, const std::string& axis_name,
                            const std::string& metric_prefix, const fs::path& out) {
    std::ofstream os(out);
    os << "axis_value,token_count,metric,mean,ci_lo,ci_hi,m_effective,scale\n";
    os << std::setprecision(17);
    for (const auto& r : rows) {
        if (r.axis_name != axis_name) continue;
        if (r.metric.rfind(metric_prefix, 0) != 0 &&
            !(metric_prefix == "error" &&
              (r.metric.rfind("rmse.", 0) == 0 || r.metric.rfind("maxae.", 0) == 0)))
            continue;
        os << r.axis_value << ',' << r.token_count << ',' << r.metric << ',' << r.mean << ','
           << r.ci_lo << ',' << r.ci_hi << ',' << r.m_effective << ',' << scale_name(r.scale)
           << '\n';
    }
}

inline void write_rollout_error(const std::vector<MetricRow>& rows, const fs::path& out_dir) {
    std::map<std::string, std::vector<const MetricRow*>> by_source;
    for (const auto& r : rows)
        if (r.axis_name == "step" && r.metric.rfind("rmse.", 0) == 0)
            by_source[r.metric.substr(5)].push_back(&r);

    for (auto& [source, series] : by_source) {
        std::sort(series.begin(), series.end(),
                  [](const MetricRow* a, const MetricRow* b) { return a->axis_value < b->axis_value; });
        std::vector<double> xs, ys;
        for (const auto* r : series)
            if (r->mean > 0.0) {
                xs.push_back(r->axis_value);
                ys.push_back(r->mean);
            }
        double slope = 0.0;
        if (xs.size() >= 2) slope = loglog_slope(xs, ys).slope;

        std::ofstream os(out_dir / ("rollout_error_" + source + ".csv"));
        os << "step,token_count,rmse_mean,ci_lo,ci_hi,slope\n";
        os << std::setprecision(17);
        for (const auto* r : series)
            os << r->axis_value << ',' << r->token_count << ',' << r->mean << ',' << r->ci_lo
               << ',' << r->ci_hi << ',' << slope << '\n';
    }
}

inline const TrialRecord* pick_record(const std::vector<TrialRecord>& records,
                                      std::size_t trial, std::size_t generation) {
    const TrialRecord* best = nullptr;
    for (const auto& r : records) {
        if (!r.ok) continue;
        if (r.trial != trial || r.generation != generation) continue;
        if (!best || r.axis_value > best->axis_value) best = &r;
    }
    return best;
}

inline void write_temporal_diff(const ExperimentConfig& cfg,
                                const std::vector<TrialRecord>& records, std::size_t trial,
                                const fs::path& out) {
    const TrialRecord* rec = pick_record(records, trial, 0);
    if (!rec) throw ConfigError("plotdata: no usable record for temporal-diff");

    // rebuild the trial's reference from recorded provenance
    std::vector<double> knots(rec->ic_n_x + 2);
    const double dx_knots = 2.0 * rec->grid.half_width / static_cast<double>(rec->ic_n_x + 1);
    for (std::size_t i = 0; i < knots.size(); ++i)
        knots[i] = -rec->grid.half_width + static_cast<double>(i) * dx_knots;
    knots.front() = -rec->grid.half_width;
    knots.back() = rec->grid.half_width;
    ICSpline ic = ic_from_values(knots, rec->ic_knot_values);

    auto [space, time] =
        build_grids(rec->grid.half_width, rec->grid.n_x, rec->grid.final_time, rec->grid.n_t);
    const std::size_t refine_t_eff =
        stable_refine_t(cfg.pde, space, time, cfg.refine_x, cfg.refine_t);
    const SolutionField ref =
        reference_solution(cfg.pde, ic, space, time, cfg.refine_x, refine_t_eff);
    const QuantizedField q = quantize(ref.values);
    const Matrix<int> diff = temporal_differences(q);

    std::ofstream os(out);
    os << "# zero_fraction=" << zero_fraction(diff) << "\n";
    os << "i,j,delta_q\n";
    for (std::size_t j = 0; j < diff.cols(); ++j)
        for (std::size_t i = 0; i < diff.rows(); ++i)
            os << i << ',' << j << ',' << diff(i, j) << '\n';
}

inline void write_error_correlates(const std::vector<TrialRecord>& records, const fs::path& out) {
    std::ofstream os(out);
    os << "trial,generation,i,j,abs_error,value,abs_dudx,abs_dudt\n";
    os << std::setprecision(17);
    for (const auto& r : records) {
        if (!r.ok || r.predicted.cols() < 2) continue;
        for (const auto& c : error_correlates(r.predicted, r.reference, r.grid.dx, r.grid.dt))
            os << r.trial << ',' << r.generation << ',' << c.i << ',' << c.j << ','
               << c.abs_error << ',' << c.value << ',' << c.abs_dudx << ',' << c.abs_dudt << '\n';
    }
}

inline void write_topk(const std::vector<TrialRecord>& records, std::size_t trial, std::size_t k,
                       const fs::path& out) {
    std::ofstream os(out);
    os << "axis_name,axis_value,step,position,rank,token,prob\n";
    os << std::setprecision(17);
    bool any = false;
    for (const auto& r : records) {
        if (!r.ok || r.trial != trial) continue;
        for (std::size_t step = 0; step < r.value_distributions.size(); ++step) {
            const auto table = topk_table(r.value_distributions[step], k);
            for (std::size_t pos = 0; pos < table.size(); ++pos)
                for (std::size_t rank = 0; rank < table[pos].size(); ++rank) {
                    os << r.axis_name << ',' << r.axis_value << ',' << step + 1 << ',' << pos
                       << ',' << rank + 1 << ',' << table[pos][rank].token << ','
                       << table[pos][rank].prob << '\n';
                    any = true;
                }
        }
    }
    if (!any) throw ConfigError("plotdata: no distributions recorded for trial " +
                                std::to_string(trial));
}

} // namespace report_detail

struct PlotOptions {
    std::size_t trial = 0;
    std::size_t top_k = 8;
};

inline void write_plotdata(const std::string& figure, const RunPaths& paths,
                           const fs::path& out_dir, const PlotOptions& options = {}) {
    fs::create_directories(out_dir);

    auto metrics = [&]() {
        std::ifstream is(paths.metrics());
        if (!is) throw ConfigError("plotdata: missing " + paths.metrics().string());
        return read_metrics_csv(is);
    };
    auto records = [&]() { return read_records(paths.records()); };
    auto config = [&]() {
        std::ifstream is(paths.manifest());
        if (!is) throw ConfigError("plotdata: missing " + paths.manifest().string());
        return config_from_json(nlohmann::json::parse(is).at("config"));
    };

    using namespace report_detail;
    if (figure == "error-vs-nt")
        write_curve_csv(metrics(), "n_t", "error", out_dir / "error_vs_nt.csv");
    else if (figure == "error-vs-nx")
        write_curve_csv(metrics(), "n_x", "error", out_dir / "error_vs_nx.csv");
    else if (figure == "rollout-error")
        write_rollout_error(metrics(), out_dir);
    else if (figure == "entropy-vs-nt")
        write_curve_csv(metrics(), "n_t", "entropy", out_dir / "entropy_vs_nt.csv");
    else if (figure == "entropy-vs-nx")
        write_curve_csv(metrics(), "n_x", "entropy", out_dir / "entropy_vs_nx.csv");
    else if (figure == "entropy-vs-step")
        write_curve_csv(metrics(), "step", "entropy", out_dir / "entropy_vs_step.csv");
    else if (figure == "delta-e")
        write_curve_csv(metrics(), "step", "delta_e", out_dir / "delta_e_vs_step.csv");
    else if (figure == "temporal-diff")
        write_temporal_diff(config(), records(), options.trial, out_dir / "temporal_diff.csv");
    else if (figure == "error-correlates")
        write_error_correlates(records(), out_dir / "error_correlates.csv");
    else if (figure == "topk")
        write_topk(records(), options.trial, options.top_k, out_dir / "topk_tokens.csv");
    else
        throw ConfigError("plotdata: unknown figure '" + figure + "'");
}

} // namespace pdeseq
