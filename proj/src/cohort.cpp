#include "adjud/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "adjud/rng.hpp"

namespace adjud {

namespace {

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", x);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

[[noreturn]] void bad_row(const std::string& path, int lineno, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed row: " + what);
}

double parse_double(const std::string& s, const std::string& path, int lineno) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        bad_row(path, lineno, "expected number, got '" + s + "'");
    }
}

int parse_binary(const std::string& s, const std::string& path, int lineno) {
    if (s == "0") return 0;
    if (s == "1") return 1;
    bad_row(path, lineno, "expected 0/1, got '" + s + "'");
}

}  // namespace

const Subject* Cohort::find_subject(const std::string& id) const {
    for (const auto& s : subjects)
        if (s.id == id) return &s;
    return nullptr;
}

const EventRecord* Cohort::find_event(const std::string& id) const {
    for (const auto& e : events)
        if (e.subject_id == id) return &e;
    return nullptr;
}

std::vector<LongitudinalRecord> Cohort::records_for(const std::string& id) const {
    std::vector<LongitudinalRecord> out;
    for (const auto& r : longitudinal)
        if (r.subject_id == id) out.push_back(r);
    return out;
}

void Cohort::validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& s : subjects) {
        if (!ids.insert(s.id).second)
            throw std::runtime_error("cohort: duplicate subject id '" + s.id + "'");
        if (s.educ_lh == 1 && s.educ_ah == 1)
            throw std::runtime_error("cohort: subject '" + s.id + "' has both education indicators");
        if (!(s.bmi > 0.0))
            throw std::runtime_error("cohort: subject '" + s.id + "' has non-positive bmi");
        for (int c : s.nonfatal_counts)
            if (c < 0) throw std::runtime_error("cohort: negative nonfatal count for '" + s.id + "'");
    }
    const int G = num_factors();
    for (const auto& r : longitudinal) {
        if (!ids.count(r.subject_id))
            throw std::runtime_error("cohort: longitudinal record for unknown subject '" + r.subject_id + "'");
        if (r.factor < 0 || r.factor >= G)
            throw std::runtime_error("cohort: factor index out of range for '" + r.subject_id + "'");
        if (r.age < 0.0 || r.age > t_max)
            throw std::runtime_error("cohort: age outside [0, t_max] for '" + r.subject_id + "'");
    }
    std::unordered_set<std::string> event_ids;
    for (const auto& e : events) {
        if (!ids.count(e.subject_id))
            throw std::runtime_error("cohort: event for unknown subject '" + e.subject_id + "'");
        if (!event_ids.insert(e.subject_id).second)
            throw std::runtime_error("cohort: duplicate event for subject '" + e.subject_id + "'");
        if (!(e.observed_time > 0.0))
            throw std::runtime_error("cohort: non-positive observed time for '" + e.subject_id + "'");
        if (e.dead) {
            if (!e.death_age)
                throw std::runtime_error("cohort: dead subject '" + e.subject_id + "' lacks death age");
            if (!e.delta)
                throw std::runtime_error("cohort: dead subject '" + e.subject_id + "' lacks delta");
            if (std::abs(*e.death_age - e.observed_time) > 1e-9)
                throw std::runtime_error("cohort: observed time != death age for '" + e.subject_id + "'");
        } else {
            if (e.death_age || e.delta || e.c_adjudicated)
                throw std::runtime_error("cohort: alive subject '" + e.subject_id + "' carries death fields");
        }
    }
}

Cohort read_cohort(const std::string& longitudinal_path, const std::string& subjects_path,
                   const std::string& events_path) {
    Cohort cohort;

    // subjects: JSON-lines; an optional leading meta object carries cohort-level
    // fields (t_max, factor names)
    {
        std::ifstream in(subjects_path);
        if (!in) throw std::runtime_error("cannot open " + subjects_path);
        std::string line;
        int lineno = 0;
        bool first = true;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const std::exception& e) {
                bad_row(subjects_path, lineno, e.what());
            }
            if (first && j.contains("t_max")) {
                cohort.t_max = j.at("t_max").get<double>();
                cohort.factor_names = j.at("factors").get<std::vector<std::string>>();
                first = false;
                continue;
            }
            first = false;
            Subject s;
            try {
                s.id = j.at("id").get<std::string>();
                s.sex = j.at("sex").get<int>();
                s.race = j.at("race").get<int>();
                s.educ_lh = j.at("educ_lh").get<int>();
                s.educ_ah = j.at("educ_ah").get<int>();
                s.bmi = j.at("bmi").get<double>();
                s.baseline_age = j.at("baseline_age").get<double>();
                auto nf = j.at("nonfatal_counts").get<std::vector<int>>();
                if (nf.size() != 3) throw std::runtime_error("nonfatal_counts must have 3 entries");
                std::copy(nf.begin(), nf.end(), s.nonfatal_counts.begin());
            } catch (const std::exception& e) {
                bad_row(subjects_path, lineno, e.what());
            }
            cohort.subjects.push_back(std::move(s));
        }
    }

    std::unordered_map<std::string, int> factor_index;
    for (std::size_t g = 0; g < cohort.factor_names.size(); ++g)
        factor_index[cohort.factor_names[g]] = static_cast<int>(g);

    {
        std::ifstream in(longitudinal_path);
        if (!in) throw std::runtime_error("cannot open " + longitudinal_path);
        std::string line;
        int lineno = 0;
        if (!std::getline(in, line) || split_csv_line(line) !=
            std::vector<std::string>{"subject_id", "factor", "age", "value"})
            bad_row(longitudinal_path, 1, "expected header subject_id,factor,age,value");
        lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto f = split_csv_line(line);
            if (f.size() != 4) bad_row(longitudinal_path, lineno, "expected 4 fields");
            LongitudinalRecord r;
            r.subject_id = f[0];
            auto it = factor_index.find(f[1]);
            if (it == factor_index.end()) {
                factor_index[f[1]] = static_cast<int>(cohort.factor_names.size());
                cohort.factor_names.push_back(f[1]);
                it = factor_index.find(f[1]);
            }
            r.factor = it->second;
            r.age = parse_double(f[2], longitudinal_path, lineno);
            r.value = parse_double(f[3], longitudinal_path, lineno);
            cohort.longitudinal.push_back(std::move(r));
        }
    }

    {
        std::ifstream in(events_path);
        if (!in) throw std::runtime_error("cannot open " + events_path);
        std::string line;
        int lineno = 0;
        if (!std::getline(in, line) ||
            split_csv_line(line) != std::vector<std::string>{"subject_id", "dead", "death_age", "delta",
                                                             "c_adjudicated", "observed_time",
                                                             "event_indicator"})
            bad_row(events_path, 1, "unexpected header");
        lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto f = split_csv_line(line);
            if (f.size() != 7) bad_row(events_path, lineno, "expected 7 fields");
            EventRecord e;
            e.subject_id = f[0];
            e.dead = parse_binary(f[1], events_path, lineno) == 1;
            if (!f[2].empty()) e.death_age = parse_double(f[2], events_path, lineno);
            if (!f[3].empty()) e.delta = parse_binary(f[3], events_path, lineno);
            if (!f[4].empty()) e.c_adjudicated = parse_binary(f[4], events_path, lineno);
            e.observed_time = parse_double(f[5], events_path, lineno);
            e.event_indicator = parse_binary(f[6], events_path, lineno);
            cohort.events.push_back(std::move(e));
        }
    }

    if (cohort.t_max == 0.0) {
        for (const auto& r : cohort.longitudinal) cohort.t_max = std::max(cohort.t_max, r.age);
        for (const auto& e : cohort.events) cohort.t_max = std::max(cohort.t_max, e.observed_time);
    }

    std::unordered_set<std::string> ids;
    for (const auto& s : cohort.subjects)
        if (!ids.insert(s.id).second)
            throw std::runtime_error(subjects_path + ": duplicate subject id '" + s.id + "'");
    for (const auto& r : cohort.longitudinal)
        if (!ids.count(r.subject_id))
            throw std::runtime_error(longitudinal_path + ": unknown subject '" + r.subject_id + "'");
    for (const auto& e : cohort.events)
        if (!ids.count(e.subject_id))
            throw std::runtime_error(events_path + ": unknown subject '" + e.subject_id + "'");

    cohort.validate();
    return cohort;
}

void write_cohort(const Cohort& cohort, const std::string& longitudinal_path,
                  const std::string& subjects_path, const std::string& events_path) {
    {
        std::ofstream out(subjects_path);
        if (!out) throw std::runtime_error("cannot write " + subjects_path);
        nlohmann::json meta;
        meta["t_max"] = cohort.t_max;
        meta["factors"] = cohort.factor_names;
        out << meta.dump() << "\n";
        for (const auto& s : cohort.subjects) {
            nlohmann::json j;
            j["id"] = s.id;
            j["sex"] = s.sex;
            j["race"] = s.race;
            j["educ_lh"] = s.educ_lh;
            j["educ_ah"] = s.educ_ah;
            j["bmi"] = s.bmi;
            j["baseline_age"] = s.baseline_age;
            j["nonfatal_counts"] = s.nonfatal_counts;
            out << j.dump() << "\n";
        }
    }
    {
        std::ofstream out(longitudinal_path);
        if (!out) throw std::runtime_error("cannot write " + longitudinal_path);
        out << "subject_id,factor,age,value\n";
        for (const auto& r : cohort.longitudinal)
            out << r.subject_id << ',' << cohort.factor_names.at(r.factor) << ','
                << fmt_double(r.age) << ',' << fmt_double(r.value) << "\n";
    }
    {
        std::ofstream out(events_path);
        if (!out) throw std::runtime_error("cannot write " + events_path);
        out << "subject_id,dead,death_age,delta,c_adjudicated,observed_time,event_indicator\n";
        for (const auto& e : cohort.events) {
            out << e.subject_id << ',' << (e.dead ? 1 : 0) << ','
                << (e.death_age ? fmt_double(*e.death_age) : "") << ','
                << (e.delta ? std::to_string(*e.delta) : "") << ','
                << (e.c_adjudicated ? std::to_string(*e.c_adjudicated) : "") << ','
                << fmt_double(e.observed_time) << ',' << e.event_indicator << "\n";
        }
    }
}

namespace {

Cohort subset_by_ids(const Cohort& cohort, const std::unordered_set<std::string>& keep) {
    Cohort out;
    out.t_max = cohort.t_max;
    out.factor_names = cohort.factor_names;
    for (const auto& s : cohort.subjects)
        if (keep.count(s.id)) out.subjects.push_back(s);
    for (const auto& r : cohort.longitudinal)
        if (keep.count(r.subject_id)) out.longitudinal.push_back(r);
    for (const auto& e : cohort.events)
        if (keep.count(e.subject_id)) out.events.push_back(e);
    return out;
}

}  // namespace

std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort, double fraction_a, std::uint64_t seed) {
    if (!(fraction_a > 0.0 && fraction_a < 1.0))
        throw std::invalid_argument("split_cohort: fraction outside (0,1)");
    const std::size_t n = cohort.subjects.size();
    if (n == 0) throw std::invalid_argument("split_cohort: empty cohort");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, {0x51171ULL}));
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t na = static_cast<std::size_t>(std::lround(fraction_a * static_cast<double>(n)));
    std::unordered_set<std::string> ids_a, ids_b;
    for (std::size_t i = 0; i < n; ++i)
        (i < na ? ids_a : ids_b).insert(cohort.subjects[order[i]].id);

    return {subset_by_ids(cohort, ids_a), subset_by_ids(cohort, ids_b)};
}

Cohort filter_dead(const Cohort& cohort) {
    std::unordered_set<std::string> dead;
    for (const auto& e : cohort.events)
        if (e.dead) dead.insert(e.subject_id);
    return subset_by_ids(cohort, dead);
}

ConfusionMetrics confusion_metrics(const ConfusionTable& t) {
    if (t.n11 < 0 || t.n10 < 0 || t.n01 < 0 || t.n00 < 0)
        throw std::invalid_argument("confusion_metrics: negative count");
    const long icd_cvd = t.n11 + t.n01;
    const long icd_not = t.n10 + t.n00;
    if (icd_cvd == 0 || icd_not == 0)
        throw std::invalid_argument("confusion_metrics: zero column total");
    ConfusionMetrics m;
    m.sensitivity = static_cast<double>(t.n11) / static_cast<double>(icd_cvd);
    m.specificity = static_cast<double>(t.n00) / static_cast<double>(icd_not);
    m.misclassification_rate = static_cast<double>(t.n01) / static_cast<double>(icd_cvd);
    return m;
}

ConfusionTable tabulate_confusion(const Cohort& cohort) {
    ConfusionTable t;
    for (const auto& e : cohort.events) {
        if (!e.dead || !e.delta || !e.c_adjudicated) continue;
        const int c = *e.c_adjudicated, d = *e.delta;
        if (c == 1 && d == 1) ++t.n11;
        else if (c == 1 && d == 0) ++t.n10;
        else if (c == 0 && d == 1) ++t.n01;
        else ++t.n00;
    }
    return t;
}

}  // namespace adjud
