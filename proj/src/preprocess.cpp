#include "clem/preprocess.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "clem/error.hpp"

namespace clem {

AgeBucketTable::AgeBucketTable(std::vector<int> upper_bounds) : uppers_(std::move(upper_bounds)) {
    if (uppers_.empty()) throw ConfigError("age bucket table needs at least one upper bound");
    for (std::size_t i = 0; i < uppers_.size(); ++i) {
        if (uppers_[i] < 0 || (i > 0 && uppers_[i] <= uppers_[i - 1]))
            throw ConfigError("age bucket upper bounds must be non-negative and strictly increasing");
    }
}

const AgeBucketTable& AgeBucketTable::defaults() {
    static const AgeBucketTable t({2, 5, 13, 18, 33, 48, 64, 78});
    return t;
}

AgeBucket AgeBucketTable::bucket(int age_years) const {
    if (age_years < 0) age_years = 0;
    int n = static_cast<int>(uppers_.size());
    for (int i = 0; i < n; ++i) {
        if (age_years <= uppers_[i]) {
            int lower = i == 0 ? 0 : uppers_[i - 1] + 1;
            return AgeBucket{i, lower, uppers_[i],
                             std::to_string(lower) + "-" + std::to_string(uppers_[i])};
        }
    }
    int lower = uppers_.back() + 1;
    return AgeBucket{n, lower, std::nullopt, std::to_string(lower) + "+"};
}

std::vector<std::string> AgeBucketTable::labels() const {
    std::vector<std::string> out;
    out.reserve(size());
    out.push_back("0-" + std::to_string(uppers_[0]));
    for (std::size_t i = 1; i < uppers_.size(); ++i)
        out.push_back(std::to_string(uppers_[i - 1] + 1) + "-" + std::to_string(uppers_[i]));
    out.push_back(std::to_string(uppers_.back() + 1) + "+");
    return out;
}

std::vector<Claim> apply_leakage_filter(std::vector<Claim> claims, const Date& anchor) {
    const Date cutoff_hi = add_days(anchor, -7); // dropped from here on
    const Date cutoff_lo = add_years(anchor, -3);
    std::vector<Claim> out;
    out.reserve(claims.size());
    for (auto& c : claims) {
        if (c.service_date < cutoff_hi && c.service_date >= cutoff_lo)
            out.push_back(std::move(c));
    }
    return out;
}

PatientHistory apply_leakage_filter(PatientHistory h) {
    if (h.anchor_date) h.claims = apply_leakage_filter(std::move(h.claims), *h.anchor_date);
    return h;
}

LabelOutcome derive_label(const std::vector<Claim>& claims, const Date& anchor,
                          const std::set<std::string>& covid_dx_codes) {
    const Date window_end = add_days(anchor, 30);
    bool any_post_non_hosp = false;
    bool any_in_30d_window = false;
    for (const auto& c : claims) {
        if (!(c.service_date > anchor)) continue;
        if (c.is_hospitalization) {
            if (c.primary_dx && covid_dx_codes.count(c.primary_dx->value))
                return LabelOutcome::Hospitalized;
        } else {
            any_post_non_hosp = true;
        }
        if (c.service_date <= window_end) any_in_30d_window = true;
    }
    if (any_post_non_hosp) return LabelOutcome::NotHospitalized;
    if (!any_in_30d_window) return LabelOutcome::NotHospitalized;
    return LabelOutcome::Indeterminate;
}

// --- risk factor map ---

namespace {

/// Prefix-range membership: the code value, truncated to each bound's
/// length, must sort within [lo, hi].
bool in_prefix_range(const std::string& value, const RiskFactorEntry& e) {
    if (value.compare(0, e.prefix_lo.size(), e.prefix_lo) < 0) return false;
    if (value.compare(0, e.prefix_hi.size(), e.prefix_hi) > 0) return false;
    return true;
}

} // namespace

RiskFactorMap RiskFactorMap::from_entries(std::vector<RiskFactorEntry> entries) {
    RiskFactorMap m;
    m.entries_ = std::move(entries);
    std::unordered_map<std::string, int> index;
    for (const auto& e : m.entries_) {
        auto [it, inserted] = index.try_emplace(e.risk_name, static_cast<int>(m.names_.size()));
        if (inserted) m.names_.push_back(e.risk_name);
        m.entry_risk_.push_back(it->second);
    }
    m.validate();
    return m;
}

void RiskFactorMap::validate() const {
    if (entries_.empty()) throw ConfigError("risk factor map is empty");
    for (const auto& e : entries_) {
        if (e.prefix_lo.empty() || e.prefix_hi.empty())
            throw ConfigError("risk factor '" + e.risk_name + "' has an empty prefix bound");
        if (e.prefix_lo > e.prefix_hi)
            throw ConfigError("risk factor '" + e.risk_name + "' has prefix_lo > prefix_hi");
    }
    // ranges within one risk factor (and system) must not overlap
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        for (std::size_t j = i + 1; j < entries_.size(); ++j) {
            const auto& a = entries_[i];
            const auto& b = entries_[j];
            if (a.risk_name != b.risk_name || a.system != b.system) continue;
            if (a.prefix_lo <= b.prefix_hi && b.prefix_lo <= a.prefix_hi)
                throw ConfigError("risk factor '" + a.risk_name + "' has overlapping ranges");
        }
    }
}

RiskFactorMap RiskFactorMap::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open risk factor map: " + path);
    std::vector<RiskFactorEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
            line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string name, tag, lo, hi;
        if (!(ss >> name >> tag >> lo >> hi))
            throw SchemaError(path + ":" + std::to_string(lineno) +
                              ": expected 4 columns (risk_name, system, prefix_lo, prefix_hi)");
        entries.push_back(RiskFactorEntry{name, system_from_tag(tag), normalize_code(lo),
                                          normalize_code(hi)});
    }
    return from_entries(std::move(entries));
}

void RiskFactorMap::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write risk factor map: " + path);
    out << "# risk_name\tsystem\tprefix_lo\tprefix_hi\n";
    for (const auto& e : entries_)
        out << e.risk_name << '\t' << system_tag(e.system) << '\t' << e.prefix_lo << '\t'
            << e.prefix_hi << '\n';
}

std::vector<int> RiskFactorMap::match(const MedicalCode& code) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].system != code.system) continue;
        if (in_prefix_range(code.value, entries_[i])) {
            int r = entry_risk_[i];
            if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
        }
    }
    return out;
}

bool RiskFactorMap::matches_any(const MedicalCode& code) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (entries_[i].system == code.system && in_prefix_range(code.value, entries_[i]))
            return true;
    return false;
}

const RiskFactorMap& default_risk_map() {
    static const RiskFactorMap map = [] {
        auto dx = [](const char* name, const char* lo, const char* hi) {
            return RiskFactorEntry{name, CodeSystem::Diagnosis, lo, hi};
        };
        std::vector<RiskFactorEntry> e = {
            dx("cancer", "C00", "D49"),
            dx("sickle_cell", "D57", "D57"),
            dx("immunodeficiency", "D80", "D89"),
            dx("diabetes", "E08", "E13"),
            dx("obesity", "E66", "E66"),
            dx("cystic_fibrosis", "E84", "E84"),
            dx("substance_use", "F10", "F16"),
            dx("smoking", "F17", "F17"),
            dx("mental_health", "F30", "F39"),
            dx("dementia", "F01", "F03"),
            dx("hypertension", "I10", "I16"),
            dx("heart_disease", "I20", "I25"),
            dx("heart_failure", "I50", "I50"),
            dx("cerebrovascular", "I60", "I69"),
            dx("copd", "J44", "J44"),
            dx("asthma", "J45", "J45"),
            dx("interstitial_lung", "J84", "J84"),
            dx("liver_disease", "K70", "K77"),
            dx("chronic_kidney_disease", "N18", "N18"),
            dx("pregnancy", "O00", "O99"),
            dx("down_syndrome", "Q90", "Q90"),
            dx("tuberculosis", "A15", "A19"),
            dx("hiv", "B20", "B20"),
            dx("transplant", "Z94", "Z94"),
            dx("dialysis", "Z99", "Z99"),
            // procedure ranges mapped onto existing risk names
            RiskFactorEntry{"dialysis", CodeSystem::Procedure, "90935", "90999"},
        };
        return RiskFactorMap::from_entries(std::move(e));
    }();
    return map;
}

std::vector<double> map_risk_factors(const PatientHistory& history, const RiskFactorMap& map,
                                     const AgeBucketTable& buckets) {
    std::vector<double> features(map.size() + 2, 0.0);
    auto mark = [&](const MedicalCode& code) {
        for (int r : map.match(code)) features[static_cast<std::size_t>(r)] = 1.0;
    };
    for (const auto& claim : history.claims) {
        for (const auto& c : claim.dx) mark(c);
        for (const auto& c : claim.px) mark(c);
        for (const auto& c : claim.rx) mark(c);
    }
    features[map.size()] = buckets.bucket(history.age_years).ordinal;
    features[map.size() + 1] = history.sex == Sex::M ? 1.0 : 0.0;
    return features;
}

} // namespace clem
