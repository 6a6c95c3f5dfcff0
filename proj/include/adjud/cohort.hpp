#ifndef ADJUD_COHORT_HPP
#define ADJUD_COHORT_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace adjud {

struct Subject {
    std::string id;
    int sex = 0;       // 1 = female
    int race = 0;      // 1 = black
    int educ_lh = 0;   // < high school
    int educ_ah = 0;   // > high school
    double bmi = 0.0;
    double baseline_age = 0.0;
    std::array<int, 3> nonfatal_counts{0, 0, 0};  // heart failure, MI, stroke
};

struct LongitudinalRecord {
    std::string subject_id;
    int factor = 0;   // 0-based factor index
    double age = 0.0;
    double value = 0.0;
};

struct EventRecord {
    std::string subject_id;
    bool dead = false;
    std::optional<double> death_age;       // present iff dead
    std::optional<int> delta;              // ICD says CVD; present iff dead
    std::optional<int> c_adjudicated;      // true CVD death; optional even for dead
    double observed_time = 0.0;
    int event_indicator = 0;
};

struct ConfusionTable {
    // adjudicated CVD x ICD CVD cross-tabulation
    long n11 = 0;  // adjud CVD, ICD CVD
    long n10 = 0;  // adjud CVD, ICD not CVD
    long n01 = 0;  // adjud not CVD, ICD CVD
    long n00 = 0;  // adjud not CVD, ICD not CVD
};

struct ConfusionMetrics {
    // Conditioned on the ICD classification (column-wise). This matches the
    // parenthesized percentages of the source cross-tabulation, not the
    // conventional row-conditional sensitivity/specificity.
    double sensitivity = 0.0;
    double specificity = 0.0;
    double misclassification_rate = 0.0;
};

struct Cohort {
    std::vector<Subject> subjects;
    std::vector<LongitudinalRecord> longitudinal;
    std::vector<EventRecord> events;
    double t_max = 0.0;                      // Legendre shift scale
    std::vector<std::string> factor_names;   // length G

    int num_factors() const { return static_cast<int>(factor_names.size()); }
    const Subject* find_subject(const std::string& id) const;
    const EventRecord* find_event(const std::string& id) const;
    std::vector<LongitudinalRecord> records_for(const std::string& id) const;
    void validate() const;  // throws on broken invariants
};

Cohort read_cohort(const std::string& longitudinal_path, const std::string& subjects_path,
                   const std::string& events_path);
void write_cohort(const Cohort& cohort, const std::string& longitudinal_path,
                  const std::string& subjects_path, const std::string& events_path);

std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort, double fraction_a, std::uint64_t seed);

Cohort filter_dead(const Cohort& cohort);

ConfusionMetrics confusion_metrics(const ConfusionTable& table);

ConfusionTable tabulate_confusion(const Cohort& cohort);

}  // namespace adjud

#endif
