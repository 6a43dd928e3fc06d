#include "clem/claims.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "clem/error.hpp"
#include "clem/preprocess.hpp"

namespace clem {

using nlohmann::json;

const char* sex_tag(Sex s) { return s == Sex::F ? "F" : "M"; }

Sex sex_from_tag(std::string_view tag) {
    if (tag == "F") return Sex::F;
    if (tag == "M") return Sex::M;
    throw SchemaError("sex must be \"F\" or \"M\", got '" + std::string(tag) + "'");
}

void validate_claim(const Claim& c) {
    if (c.dx.empty() && c.px.empty() && c.rx.empty())
        throw SchemaError("claim '" + c.claim_id + "' carries no codes");
    if (c.primary_dx) {
        if (std::find(c.dx.begin(), c.dx.end(), *c.primary_dx) == c.dx.end())
            throw SchemaError("claim '" + c.claim_id + "': primary_dx '" + c.primary_dx->value +
                              "' is not among its diagnoses");
    }
}

namespace {

json claim_to_json(const Claim& c) {
    json j;
    j["claim_id"] = c.claim_id;
    j["service_date"] = format_date(c.service_date);
    j["is_hospitalization"] = c.is_hospitalization;
    j["primary_dx"] = c.primary_dx ? json(c.primary_dx->value) : json(nullptr);
    auto codes = [](const std::vector<MedicalCode>& v) {
        json a = json::array();
        for (const auto& c : v) a.push_back(c.value);
        return a;
    };
    j["dx"] = codes(c.dx);
    j["px"] = codes(c.px);
    j["rx"] = codes(c.rx);
    return j;
}

json record_to_json(const PatientHistory& h) {
    json j;
    j["patient_id"] = h.patient_id;
    j["age"] = h.age_years;
    j["sex"] = sex_tag(h.sex);
    j["anchor_date"] = h.anchor_date ? json(format_date(*h.anchor_date)) : json(nullptr);
    json claims = json::array();
    for (const auto& c : h.claims) claims.push_back(claim_to_json(c));
    j["claims"] = claims;
    return j;
}

Date require_date(const json& j, const char* field) {
    if (!j.is_string()) throw SchemaError(std::string(field) + " must be a date string");
    auto d = parse_date(j.get<std::string>());
    if (!d) throw SchemaError(std::string(field) + " is not a valid YYYY-MM-DD date: " +
                              j.get<std::string>());
    return *d;
}

std::vector<MedicalCode> codes_from_json(const json& j, CodeSystem system, const char* field) {
    if (!j.is_array()) throw SchemaError(std::string(field) + " must be an array");
    std::vector<MedicalCode> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_string()) throw SchemaError(std::string(field) + " entries must be strings");
        out.push_back(parse_code(system, v.get<std::string>()));
    }
    return out;
}

Claim claim_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("claim must be an object");
    Claim c;
    c.claim_id = j.at("claim_id").get<std::string>();
    c.service_date = require_date(j.at("service_date"), "service_date");
    c.is_hospitalization = j.at("is_hospitalization").get<bool>();
    c.dx = codes_from_json(j.at("dx"), CodeSystem::Diagnosis, "dx");
    c.px = codes_from_json(j.at("px"), CodeSystem::Procedure, "px");
    c.rx = codes_from_json(j.at("rx"), CodeSystem::Medication, "rx");
    const auto& p = j.at("primary_dx");
    if (!p.is_null()) c.primary_dx = parse_code(CodeSystem::Diagnosis, p.get<std::string>());
    validate_claim(c);
    return c;
}

PatientHistory record_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("record must be an object");
    PatientHistory h;
    h.patient_id = j.at("patient_id").get<std::string>();
    if (!j.at("age").is_number_integer() || j.at("age").get<int>() < 0)
        throw SchemaError("age must be a non-negative integer");
    h.age_years = j.at("age").get<int>();
    h.sex = sex_from_tag(j.at("sex").get<std::string>());
    const auto& a = j.at("anchor_date");
    if (!a.is_null()) h.anchor_date = require_date(a, "anchor_date");
    for (const auto& cj : j.at("claims")) h.claims.push_back(claim_from_json(cj));
    std::stable_sort(h.claims.begin(), h.claims.end(),
                     [](const Claim& x, const Claim& y) { return x.service_date < y.service_date; });
    return h;
}

} // namespace

void save_claims_corpus(const std::vector<PatientHistory>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write corpus: " + path);
    for (const auto& r : records) out << record_to_json(r).dump() << '\n';
    if (!out) throw IoError("write failed: " + path);
}

void for_each_corpus_record(const std::string& path,
                            const std::function<void(PatientHistory&&)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus: " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            fn(record_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

std::vector<PatientHistory> read_corpus_raw(const std::string& path) {
    std::vector<PatientHistory> out;
    for_each_corpus_record(path, [&](PatientHistory&& h) { out.push_back(std::move(h)); });
    return out;
}

std::vector<PatientHistory> load_claims_corpus(const std::string& path) {
    std::vector<PatientHistory> out;
    for_each_corpus_record(
        path, [&](PatientHistory&& h) { out.push_back(apply_leakage_filter(std::move(h))); });
    return out;
}

std::vector<LabeledExample> load_labeled_cohort(const std::string& path,
                                                const std::set<std::string>& covid_dx_codes,
                                                CohortStats* stats) {
    std::vector<LabeledExample> out;
    CohortStats s;
    for_each_corpus_record(path, [&](PatientHistory&& h) {
        ++s.n_records;
        if (!h.anchor_date)
            throw SchemaError("cohort record '" + h.patient_id + "' has no anchor_date");
        switch (derive_label(h.claims, *h.anchor_date, covid_dx_codes)) {
            case LabelOutcome::Hospitalized:
                ++s.n_hospitalized;
                out.push_back({apply_leakage_filter(std::move(h)), Label::Hospitalized});
                break;
            case LabelOutcome::NotHospitalized:
                ++s.n_not_hospitalized;
                out.push_back({apply_leakage_filter(std::move(h)), Label::NotHospitalized});
                break;
            case LabelOutcome::Indeterminate:
                ++s.n_indeterminate;
                break;
        }
    });
    if (stats) *stats = s;
    return out;
}

} // namespace clem
