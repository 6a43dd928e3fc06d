#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>

#include "clem/error.hpp"
#include "clem/narrative.hpp"
#include "clem/rng.hpp"
#include "testutil.hpp"

using namespace clem;
using namespace clem::testutil;

namespace {

std::vector<PatientHistory> toy_corpus() {
    auto c1 = make_claim("2020-01-05", {"E119"});
    c1.px.push_back(parse_code(CodeSystem::Procedure, "99214"));
    c1.rx.push_back(parse_code(CodeSystem::Medication, "0143988701"));
    return {make_history({c1}, 65, Sex::F)};
}

} // namespace

TEST_CASE("token surfaces carry their kind as a prefix") {
    CHECK(token_kind("AGE_65-78") == TokenKind::Age);
    CHECK(token_kind("SEX_F") == TokenKind::Sex);
    CHECK(token_kind("DX_R062") == TokenKind::Dx);
    CHECK(token_kind("PX_99214") == TokenKind::Px);
    CHECK(token_kind("RX_0143988701") == TokenKind::Rx);
    CHECK(token_kind("[CLS]") == TokenKind::Special);
    CHECK(code_token(parse_code(CodeSystem::Diagnosis, "R062")) == "DX_R062");
    CHECK(age_token(65, AgeBucketTable::defaults()) == "AGE_65-78");
    CHECK(sex_token(Sex::M) == "SEX_M");
}

TEST_CASE("vocabulary build: specials fixed, dense ids, deterministic order") {
    const auto corpus = toy_corpus();
    const auto vocab = Vocabulary::build(corpus, 1);
    // 4 specials + 3 codes + 9 age buckets + 2 sex tokens
    CHECK(vocab.size() == 18);
    CHECK(vocab.surface(kPadId) == "[PAD]");
    CHECK(vocab.surface(kUnkId) == "[UNK]");
    CHECK(vocab.surface(kClsId) == "[CLS]");
    CHECK(vocab.surface(kMaskId) == "[MASK]");
    // frequency-1 tokens sort before the unseen demographic tokens
    CHECK(vocab.surface(4) == "AGE_65-78");
    CHECK(vocab.surface(5) == "DX_E119");
    CHECK(vocab.surface(6) == "PX_99214");
    CHECK(vocab.surface(7) == "RX_0143988701");
    CHECK(vocab.surface(8) == "SEX_F");
    CHECK(vocab.frequency(8) == 1);
    CHECK(vocab.frequency(9) == 0);

    // determinism
    const auto again = Vocabulary::build(corpus, 1);
    REQUIRE(again.size() == vocab.size());
    for (std::int32_t i = 0; i < vocab.size(); ++i) CHECK(again.surface(i) == vocab.surface(i));

    // round trip: every non-[UNK] id re-encodes to itself
    for (std::int32_t i = 0; i < vocab.size(); ++i) {
        if (i == kUnkId) continue;
        CHECK(vocab.id(vocab.surface(i)) == i);
    }
    CHECK(vocab.id("DX_NOPE99") == kUnkId);
}

TEST_CASE("min_count drops rare code tokens, which then map to [UNK]") {
    std::vector<PatientHistory> corpus;
    std::vector<Claim> claims;
    for (int i = 0; i < 5; ++i) claims.push_back(make_claim("2020-01-05", {"R062"}));
    for (int i = 0; i < 6; ++i) claims.push_back(make_claim("2020-02-05", {"E119"}));
    corpus.push_back(make_history(claims, 40, Sex::M));

    const auto vocab = Vocabulary::build(corpus, 6);
    CHECK(vocab.id("DX_R062") == kUnkId); // 5 occurrences < 6
    CHECK(vocab.id("DX_E119") != kUnkId);
    // demographic tokens are exempt from the threshold
    CHECK(vocab.id("AGE_34-48") != kUnkId);
    CHECK(vocab.id("SEX_M") != kUnkId);
    CHECK_THROWS_AS(Vocabulary::build({}, 1), Error);
}

TEST_CASE("vocabulary file round-trips and rejects corrupted id columns") {
    const auto vocab = Vocabulary::build(toy_corpus(), 1);
    const std::string path = "/tmp/clem_vocab_test.tsv";
    vocab.save(path);
    const auto loaded = Vocabulary::load(path);
    REQUIRE(loaded.size() == vocab.size());
    for (std::int32_t i = 0; i < vocab.size(); ++i) {
        CHECK(loaded.surface(i) == vocab.surface(i));
        CHECK(loaded.frequency(i) == vocab.frequency(i));
        CHECK(loaded.kind(i) == vocab.kind(i));
    }
    std::ofstream bad("/tmp/clem_vocab_bad.tsv");
    bad << "0\t[PAD]\t0\n5\t[UNK]\t0\n";
    bad.close();
    CHECK_THROWS_AS(Vocabulary::load("/tmp/clem_vocab_bad.tsv"), SchemaError);
}

TEST_CASE("tokenize_claim prepends demographics and shuffles codes by seed") {
    const auto vocab = Vocabulary::build(toy_corpus(), 1);

    SUBCASE("singleton claim") {
        auto claim = make_claim("2020-01-05", {"E119"});
        auto seq = tokenize_claim(claim, 65, Sex::F, vocab, 7);
        REQUIRE(seq.ids.size() == 3);
        CHECK(vocab.surface(seq.ids[0]) == "AGE_65-78");
        CHECK(vocab.surface(seq.ids[1]) == "SEX_F");
        CHECK(vocab.surface(seq.ids[2]) == "DX_E119");
        CHECK(seq.kinds[0] == TokenKind::Age);
        CHECK(seq.kinds[2] == TokenKind::Dx);
        CHECK(seq.claim_ids[seq.claim_ref[2]] == claim.claim_id);
    }

    SUBCASE("same seed gives the same order; different seeds differ; multiset invariant") {
        std::vector<PatientHistory> corpus;
        auto claim = make_claim("2020-03-01", {"A010", "B200", "C341", "D571", "E119"});
        corpus.push_back(make_history({claim}, 30, Sex::M));
        const auto v5 = Vocabulary::build(corpus, 1);

        auto a = tokenize_claim(claim, 30, Sex::M, v5, 101);
        auto b = tokenize_claim(claim, 30, Sex::M, v5, 101);
        CHECK(a.ids == b.ids);

        auto c = tokenize_claim(claim, 30, Sex::M, v5, 102);
        auto sa = a.ids, sc = c.ids;
        std::sort(sa.begin(), sa.end());
        std::sort(sc.begin(), sc.end());
        CHECK(sa == sc);      // same multiset
        CHECK(a.ids != c.ids); // 5 codes: order differs with probability 119/120
    }

    SUBCASE("unknown codes map to [UNK]") {
        auto claim = make_claim("2020-01-05", {"Q999"});
        auto seq = tokenize_claim(claim, 65, Sex::F, vocab, 7);
        CHECK(seq.ids[2] == kUnkId);
    }
}

TEST_CASE("tokenize_history: [CLS] AGE SEX then chronological codes, truncate oldest") {
    std::vector<PatientHistory> corpus;
    auto c1 = make_claim("2020-01-05", {"A010", "B200"});
    auto c2 = make_claim("2020-02-05", {"C341", "D571"});
    corpus.push_back(make_history({c1, c2}, 50, Sex::F));
    const auto vocab = Vocabulary::build(corpus, 1);

    SUBCASE("empty claim list") {
        auto seq = tokenize_history(make_history({}, 50, Sex::F), vocab, 16);
        REQUIRE(seq.ids.size() == 3);
        CHECK(seq.ids[0] == kClsId);
        CHECK(vocab.surface(seq.ids[1]) == "AGE_49-64");
        CHECK(vocab.surface(seq.ids[2]) == "SEX_F");
    }

    SUBCASE("two claims, two codes each, max_len 10: length 7, chronological") {
        auto seq = tokenize_history(make_history({c1, c2}, 50, Sex::F), vocab, 10);
        REQUIRE(seq.ids.size() == 7);
        CHECK(vocab.surface(seq.ids[3]) == "DX_A010");
        CHECK(vocab.surface(seq.ids[4]) == "DX_B200");
        CHECK(vocab.surface(seq.ids[5]) == "DX_C341");
        CHECK(vocab.surface(seq.ids[6]) == "DX_D571");
        CHECK(seq.claim_ids[seq.claim_ref[3]] == c1.claim_id);
        CHECK(seq.claim_ids[seq.claim_ref[6]] == c2.claim_id);
    }

    SUBCASE("over max_len keeps the most recent code tokens and demographics") {
        auto seq = tokenize_history(make_history({c1, c2}, 50, Sex::F), vocab, 5);
        REQUIRE(seq.ids.size() == 5);
        CHECK(seq.ids[0] == kClsId);
        CHECK(vocab.surface(seq.ids[1]) == "AGE_49-64");
        CHECK(vocab.surface(seq.ids[2]) == "SEX_F");
        CHECK(vocab.surface(seq.ids[3]) == "DX_C341"); // oldest dropped first
        CHECK(vocab.surface(seq.ids[4]) == "DX_D571");
    }

    SUBCASE("deterministic: no shuffling at fine-tune time") {
        auto a = tokenize_history(make_history({c1, c2}, 50, Sex::F), vocab, 10);
        auto b = tokenize_history(make_history({c1, c2}, 50, Sex::F), vocab, 10);
        CHECK(a.ids == b.ids);
    }
}
