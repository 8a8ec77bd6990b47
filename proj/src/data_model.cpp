#include "causalnet/data_model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace causalnet {

std::string to_string(Condition c) {
    return c == Condition::control ? "control" : "treated";
}

Condition condition_from_string(const std::string& s) {
    if (s == "control") return Condition::control;
    if (s == "treated") return Condition::treated;
    throw SchemaError("unknown condition '" + s + "' (expected 'control' or 'treated')");
}

double to_log_time(double time_hours) {
    if (!(time_hours >= 0.0))
        throw UsageError("to_log_time: time_hours must be nonnegative, got " +
                         std::to_string(time_hours));
    return std::log1p(time_hours);
}

TimeGrid TimeGrid::uniform(double t_max_hours) {
    if (!(t_max_hours > 0.0)) throw UsageError("TimeGrid: t_max_hours must be positive");
    TimeGrid g;
    g.t_max_hours = t_max_hours;
    g.points.resize(kSize);
    const double hi = to_log_time(t_max_hours);
    for (std::size_t i = 0; i < kSize; ++i)
        g.points[i] = hi * static_cast<double>(i) / static_cast<double>(kSize - 1);
    return g;
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& s, const std::string& field, std::size_t line_no) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": field '" + field +
                         "' is not a number: '" + s + "'");
    }
    if (pos != s.size())
        throw ParseError("line " + std::to_string(line_no) + ": trailing characters in field '" +
                         field + "': '" + s + "'");
    if (!std::isfinite(v))
        throw ParseError("line " + std::to_string(line_no) + ": field '" + field +
                         "' is not finite");
    return v;
}

constexpr const char* kHeader = "compound_id,condition,replicate_id,time_hours,value_log2";

}  // namespace

std::vector<RawObservation> load_observations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open input file: " + path);
    std::vector<RawObservation> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) {
            std::string stripped = line;
            while (!stripped.empty() && (stripped.back() == '\r' || stripped.back() == '\n'))
                stripped.pop_back();
            if (stripped != kHeader)
                throw ParseError(path + ": line 1: expected header '" + std::string(kHeader) +
                                 "', got '" + stripped + "'");
            continue;
        }
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_row(line);
        if (fields.size() != 5)
            throw ParseError("line " + std::to_string(line_no) + ": expected 5 fields, got " +
                             std::to_string(fields.size()));
        RawObservation o;
        o.compound_id = fields[0];
        o.condition = condition_from_string(fields[1]);
        o.replicate_id = fields[2];
        o.time_hours = parse_double(fields[3], "time_hours", line_no);
        if (o.time_hours < 0.0)
            throw ParseError("line " + std::to_string(line_no) + ": time_hours must be >= 0");
        o.value_log2 = parse_double(fields[4], "value_log2", line_no);
        out.push_back(std::move(o));
    }
    return out;
}

void save_observations(const std::string& path, const std::vector<RawObservation>& obs) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open output file: " + path);
    out << kHeader << "\n";
    out.precision(17);
    for (const auto& o : obs) {
        out << o.compound_id << ',' << to_string(o.condition) << ',' << o.replicate_id << ','
            << o.time_hours << ',' << o.value_log2 << "\n";
    }
}

std::map<SeriesKey, CompoundSeries> group_by_compound(const std::vector<RawObservation>& obs) {
    std::map<SeriesKey, CompoundSeries> groups;
    for (const auto& o : obs) {
        SeriesKey key{o.compound_id, o.condition};
        auto it = groups.find(key);
        if (it == groups.end()) {
            CompoundSeries s;
            s.compound_id = o.compound_id;
            s.condition = o.condition;
            it = groups.emplace(key, std::move(s)).first;
        }
        it->second.observations.emplace_back(to_log_time(o.time_hours), o.value_log2);
    }
    return groups;
}

}  // namespace causalnet
