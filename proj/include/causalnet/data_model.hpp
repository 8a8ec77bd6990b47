#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "causalnet/errors.hpp"

namespace causalnet {

enum class Condition { control, treated };

std::string to_string(Condition c);
Condition condition_from_string(const std::string& s);

struct RawObservation {
    std::string compound_id;
    Condition condition = Condition::control;
    std::string replicate_id;
    double time_hours = 0.0;  // >= 0
    double value_log2 = 0.0;  // finite
};

// The uniform evaluation grid: 101 points in the log-time coordinate,
// from 0 (experiment start) to log_time(t_max_hours).
struct TimeGrid {
    std::vector<double> points;
    double t_max_hours = 0.0;

    static constexpr std::size_t kSize = 101;
    static TimeGrid uniform(double t_max_hours);
    double span() const { return points.back() - points.front(); }
};

// Raw per-compound data for one condition, times already in log-time.
struct CompoundSeries {
    std::string compound_id;
    Condition condition = Condition::control;
    std::vector<std::pair<double, double>> observations;  // (log_time, value)
};

// Monotone map of experiment hours onto the log time scale; 0 stays 0.
double to_log_time(double time_hours);

// Reads the observation CSV (header
// compound_id,condition,replicate_id,time_hours,value_log2). Row order is
// preserved; duplicate rows are retained as replicates.
std::vector<RawObservation> load_observations(const std::string& path);

// Inverse of load_observations for round-trip checks and fixtures.
void save_observations(const std::string& path, const std::vector<RawObservation>& obs);

using SeriesKey = std::pair<std::string, Condition>;

// Partitions observations into per-(compound, condition) series with times
// converted to log-time. Groups with fewer than 2 observations are still
// returned; GP fitting skips them with a warning.
std::map<SeriesKey, CompoundSeries> group_by_compound(const std::vector<RawObservation>& obs);

}  // namespace causalnet
