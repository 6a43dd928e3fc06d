#include "clem/narrative.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "clem/error.hpp"
#include "clem/rng.hpp"

namespace clem {

TokenKind token_kind(std::string_view surface) {
    if (surface.rfind("AGE_", 0) == 0) return TokenKind::Age;
    if (surface.rfind("SEX_", 0) == 0) return TokenKind::Sex;
    if (surface.rfind("DX_", 0) == 0) return TokenKind::Dx;
    if (surface.rfind("PX_", 0) == 0) return TokenKind::Px;
    if (surface.rfind("RX_", 0) == 0) return TokenKind::Rx;
    return TokenKind::Special;
}

bool is_code_kind(TokenKind k) {
    return k == TokenKind::Dx || k == TokenKind::Px || k == TokenKind::Rx;
}

std::string age_token(int age_years, const AgeBucketTable& buckets) {
    return "AGE_" + buckets.bucket(age_years).label;
}

std::string sex_token(Sex s) { return std::string("SEX_") + sex_tag(s); }

std::string code_token(const MedicalCode& c) {
    switch (c.system) {
        case CodeSystem::Diagnosis: return "DX_" + c.value;
        case CodeSystem::Procedure: return "PX_" + c.value;
        case CodeSystem::Medication: return "RX_" + c.value;
    }
    return c.value;
}

namespace {
const char* kSpecials[kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[MASK]"};
}

Vocabulary Vocabulary::build(const std::vector<PatientHistory>& corpus, int min_count,
                             const AgeBucketTable& buckets) {
    if (corpus.empty()) throw Error("cannot build a vocabulary from an empty corpus");
    std::map<std::string, std::int64_t> counts; // ordered: deterministic ties
    for (const auto& h : corpus) {
        for (const auto& claim : h.claims) {
            counts[age_token(h.age_years, buckets)]++;
            counts[sex_token(h.sex)]++;
            for (const auto& c : claim.dx) counts[code_token(c)]++;
            for (const auto& c : claim.px) counts[code_token(c)]++;
            for (const auto& c : claim.rx) counts[code_token(c)]++;
        }
    }
    // demographic tokens are part of the vocabulary even when unseen
    for (const auto& label : buckets.labels()) counts.try_emplace("AGE_" + label, 0);
    counts.try_emplace("SEX_F", 0);
    counts.try_emplace("SEX_M", 0);

    std::vector<std::pair<std::string, std::int64_t>> kept;
    kept.reserve(counts.size());
    for (auto& [surface, n] : counts) {
        TokenKind k = token_kind(surface);
        if (is_code_kind(k) && n < min_count) continue;
        kept.emplace_back(surface, n);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    v.min_count_ = min_count;
    for (int i = 0; i < kNumSpecials; ++i) {
        v.surfaces_.emplace_back(kSpecials[i]);
        v.freqs_.push_back(0);
    }
    for (auto& [surface, n] : kept) {
        v.surfaces_.push_back(surface);
        v.freqs_.push_back(n);
    }
    v.index();
    return v;
}

void Vocabulary::index() {
    kinds_.resize(surfaces_.size());
    by_surface_.reserve(surfaces_.size() * 2);
    for (std::size_t i = 0; i < surfaces_.size(); ++i) {
        kinds_[i] = token_kind(surfaces_[i]);
        if (!by_surface_.emplace(surfaces_[i], static_cast<std::int32_t>(i)).second)
            throw SchemaError("duplicate vocabulary surface: " + surfaces_[i]);
    }
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary: " + path);
    Vocabulary v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        long long id, freq;
        std::string surface;
        if (!(ss >> id >> surface >> freq))
            throw SchemaError(path + ":" + std::to_string(lineno) +
                              ": expected (id, surface, frequency)");
        if (id != static_cast<long long>(v.surfaces_.size()))
            throw SchemaError(path + ":" + std::to_string(lineno) + ": ids must be dense from 0");
        v.surfaces_.push_back(surface);
        v.freqs_.push_back(freq);
    }
    if (v.surfaces_.size() < kNumSpecials) throw SchemaError(path + ": missing special tokens");
    for (int i = 0; i < kNumSpecials; ++i)
        if (v.surfaces_[static_cast<std::size_t>(i)] != kSpecials[i])
            throw SchemaError(path + ": special token ids 0-3 must be [PAD],[UNK],[CLS],[MASK]");
    v.index();
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary: " + path);
    for (std::size_t i = 0; i < surfaces_.size(); ++i)
        out << i << '\t' << surfaces_[i] << '\t' << freqs_[i] << '\n';
    if (!out) throw IoError("write failed: " + path);
}

std::int32_t Vocabulary::id(std::string_view surface) const {
    auto it = by_surface_.find(std::string(surface));
    return it == by_surface_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::surface(std::int32_t id) const {
    return surfaces_.at(static_cast<std::size_t>(id));
}

namespace {

void push_token(ClaimSequence& seq, std::int32_t id, TokenKind kind, std::uint32_t claim_ref) {
    seq.ids.push_back(id);
    seq.kinds.push_back(kind);
    seq.claim_ref.push_back(claim_ref);
}

void append_claim_codes(std::vector<std::pair<std::int32_t, TokenKind>>& out, const Claim& claim,
                        const Vocabulary& vocab) {
    for (const auto& c : claim.dx) out.emplace_back(vocab.id(code_token(c)), TokenKind::Dx);
    for (const auto& c : claim.px) out.emplace_back(vocab.id(code_token(c)), TokenKind::Px);
    for (const auto& c : claim.rx) out.emplace_back(vocab.id(code_token(c)), TokenKind::Rx);
}

} // namespace

ClaimSequence tokenize_claim(const Claim& claim, int age_years, Sex sex, const Vocabulary& vocab,
                             std::uint64_t seed, const AgeBucketTable& buckets) {
    ClaimSequence seq;
    seq.claim_ids.push_back(claim.claim_id);
    push_token(seq, vocab.id(age_token(age_years, buckets)), TokenKind::Age, 0);
    push_token(seq, vocab.id(sex_token(sex)), TokenKind::Sex, 0);

    std::vector<std::pair<std::int32_t, TokenKind>> codes;
    append_claim_codes(codes, claim, vocab);
    // Fisher-Yates under the per-claim seed
    Rng rng(seed);
    for (std::size_t i = codes.size(); i > 1; --i)
        std::swap(codes[i - 1], codes[rng.bounded(i)]);
    for (auto& [id, kind] : codes) push_token(seq, id, kind, 0);
    return seq;
}

ClaimSequence tokenize_history(const PatientHistory& history, const Vocabulary& vocab,
                               std::size_t max_len, const AgeBucketTable& buckets) {
    if (max_len < 3) throw ConfigError("tokenize_history needs max_len >= 3");
    struct Item {
        std::int32_t id;
        TokenKind kind;
        std::uint32_t claim_ref;
    };
    std::vector<Item> codes;
    std::vector<std::string> claim_ids;
    for (const auto& claim : history.claims) {
        std::vector<std::pair<std::int32_t, TokenKind>> cs;
        append_claim_codes(cs, claim, vocab);
        if (cs.empty()) continue;
        claim_ids.push_back(claim.claim_id);
        auto ref = static_cast<std::uint32_t>(claim_ids.size() - 1);
        for (auto& [id, kind] : cs) codes.push_back({id, kind, ref});
    }
    const std::size_t budget = max_len - 3;
    std::size_t start = codes.size() > budget ? codes.size() - budget : 0;

    ClaimSequence seq;
    seq.claim_ids = std::move(claim_ids);
    seq.claim_ids.insert(seq.claim_ids.begin(), ""); // ref 0: demographics
    push_token(seq, kClsId, TokenKind::Special, 0);
    push_token(seq, vocab.id(age_token(history.age_years, buckets)), TokenKind::Age, 0);
    push_token(seq, vocab.id(sex_token(history.sex)), TokenKind::Sex, 0);
    for (std::size_t i = start; i < codes.size(); ++i)
        push_token(seq, codes[i].id, codes[i].kind, codes[i].claim_ref + 1);
    return seq;
}

} // namespace clem
