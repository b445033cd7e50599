#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "rrb/metrics.hpp"

using rrb::Errc;
using rrb::InclusionStore;
using rrb::RankLedger;
using rrb::Version;

TEST_CASE("rr_at_k applies the cutoff") {
    CHECK(rrb::rr_at_k(1, 5) == 1.0);
    CHECK(rrb::rr_at_k(4, 5) == 0.25);
    CHECK(rrb::rr_at_k(7, 5) == 0.0);
    CHECK(rrb::rr_at_k(5, 5) == 0.2);  // boundary inclusive
}

TEST_CASE("rr_at_k is monotone in rank and K") {
    for (std::size_t k = 1; k <= 20; ++k) {
        for (std::size_t rank = 1; rank < 30; ++rank) {
            CHECK(rrb::rr_at_k(rank + 1, k) <= rrb::rr_at_k(rank, k));
            CHECK(rrb::rr_at_k(rank, k + 1) >= rrb::rr_at_k(rank, k));
        }
    }
}

namespace {

RankLedger two_query_ledger() {
    RankLedger ledger;
    ledger.set("ad", "q1", Version::before, 2);
    ledger.set("ad", "q2", Version::before, 3);
    ledger.set("ad", "q1", Version::after, 1);
    ledger.set("ad", "q2", Version::after, 2);
    return ledger;
}

}  // namespace

TEST_CASE("delta MRR matches hand-computed fixtures") {
    const std::vector<std::string> qs{"q1", "q2"};

    SECTION("before {2,3} after {1,2} at K=5 gives 1/3") {
        auto ledger = two_query_ledger();
        CHECK_THAT(rrb::delta_mrr_at_k(ledger, "ad", qs, 5),
                   Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-9));
    }

    SECTION("identical ranks give exactly zero") {
        RankLedger ledger;
        for (const auto& q : qs) {
            ledger.set("ad", q, Version::before, 4);
            ledger.set("ad", q, Version::after, 4);
        }
        CHECK(rrb::delta_mrr_at_k(ledger, "ad", qs, 5) == 0.0);
    }

    SECTION("both versions outside the cutoff give zero") {
        RankLedger ledger;
        ledger.set("ad", "q1", Version::before, 9);
        ledger.set("ad", "q1", Version::after, 7);
        ledger.set("ad", "q2", Version::before, 12);
        ledger.set("ad", "q2", Version::after, 30);
        CHECK(rrb::delta_mrr_at_k(ledger, "ad", qs, 5) == 0.0);
    }

    SECTION("errors") {
        auto ledger = two_query_ledger();
        CHECK_THROWS_MATCHES(rrb::delta_mrr_at_k(ledger, "ad", {}, 5), rrb::Error,
                             Catch::Matchers::Predicate<rrb::Error>([](const rrb::Error& e) {
                                 return e.code() == Errc::empty_query_set;
                             }));
        CHECK_THROWS_MATCHES(rrb::delta_mrr_at_k(ledger, "ad", {"q1", "missing"}, 5), rrb::Error,
                             Catch::Matchers::Predicate<rrb::Error>([](const rrb::Error& e) {
                                 return e.code() == Errc::missing_ledger_entry;
                             }));
    }
}

TEST_CASE("eligible_queries applies both cutoffs inclusively") {
    RankLedger ledger;
    ledger.set("ad", "qa", Version::before, 3);
    ledger.set("ad", "qa", Version::after, 9);
    ledger.set("ad", "qb", Version::before, 5);
    ledger.set("ad", "qb", Version::after, 5);
    ledger.set("ad", "qc", Version::before, 1);
    ledger.set("ad", "qc", Version::after, 2);

    auto eligible = rrb::eligible_queries(ledger, "ad", {"qa", "qb", "qc"}, 5);
    CHECK(eligible == std::vector<std::string>{"qb", "qc"});  // qa fails the after cutoff
}

TEST_CASE("eligible_queries equals a direct predicate scan and nests over K") {
    std::mt19937 gen(77);
    RankLedger ledger;
    std::vector<std::string> qs;
    std::map<std::string, std::pair<std::size_t, std::size_t>> ranks;
    for (int i = 0; i < 60; ++i) {
        const std::string q = "q" + std::to_string(i);
        const std::size_t before = 1 + gen() % 25;
        const std::size_t after = 1 + gen() % 25;
        ledger.set("ad", q, Version::before, before);
        ledger.set("ad", q, Version::after, after);
        qs.push_back(q);
        ranks[q] = {before, after};
    }

    for (std::size_t K : {1u, 3u, 5u, 10u, 20u}) {
        std::vector<std::string> expected;
        for (const auto& q : qs)
            if (ranks[q].first <= K && ranks[q].second <= K) expected.push_back(q);
        CHECK(rrb::eligible_queries(ledger, "ad", qs, K) == expected);
    }

    auto small = rrb::eligible_queries(ledger, "ad", qs, 4);
    auto large = rrb::eligible_queries(ledger, "ad", qs, 17);
    for (const auto& q : small)
        CHECK(std::find(large.begin(), large.end(), q) != large.end());
}

TEST_CASE("delta DIR reports percentage points or absence") {
    InclusionStore store;
    store.set("ad", "q1", Version::before, true);
    store.set("ad", "q2", Version::before, false);
    store.set("ad", "q1", Version::after, true);
    store.set("ad", "q2", Version::after, true);

    auto lift = rrb::delta_dir_at_k(store, {"q1", "q2"}, "ad");
    REQUIRE(lift.has_value());
    CHECK_THAT(*lift, Catch::Matchers::WithinAbs(50.0, 1e-9));

    InclusionStore same;
    same.set("ad", "q1", Version::before, true);
    same.set("ad", "q1", Version::after, true);
    CHECK(*rrb::delta_dir_at_k(same, {"q1"}, "ad") == 0.0);

    CHECK(!rrb::delta_dir_at_k(store, {}, "ad").has_value());

    CHECK_THROWS_MATCHES(rrb::delta_dir_at_k(store, {"q9"}, "ad"), rrb::Error,
                         Catch::Matchers::Predicate<rrb::Error>([](const rrb::Error& e) {
                             return e.code() == Errc::missing_inclusion;
                         }));
}

TEST_CASE("delta DIR negates under version swap") {
    std::mt19937 gen(123);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + gen() % 8;
        InclusionStore forward;
        InclusionStore swapped;
        std::vector<std::string> qs;
        for (std::size_t i = 0; i < n; ++i) {
            const std::string q = "q" + std::to_string(i);
            const bool before = (gen() & 1) != 0;
            const bool after = (gen() & 1) != 0;
            forward.set("ad", q, Version::before, before);
            forward.set("ad", q, Version::after, after);
            swapped.set("ad", q, Version::before, after);
            swapped.set("ad", q, Version::after, before);
            qs.push_back(q);
        }
        auto a = rrb::delta_dir_at_k(forward, qs, "ad");
        auto b = rrb::delta_dir_at_k(swapped, qs, "ad");
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK(*a == -*b);
    }
}

TEST_CASE("aggregate averages per ad and counts absences") {
    rrb::MetricReport solo{"a1", 5, 0.125, 12.5, 2};
    auto single = rrb::aggregate({solo});
    CHECK(single.k == 5);
    CHECK(single.ad_count == 1);
    CHECK(single.mean_delta_mrr == 0.125);
    CHECK(*single.mean_delta_dir_pp == 12.5);

    rrb::MetricReport r1{"a1", 5, 0.0, 10.0, 1};
    rrb::MetricReport r2{"a2", 5, 0.2, std::nullopt, 0};
    auto mixed = rrb::aggregate({r1, r2});
    CHECK_THAT(mixed.mean_delta_mrr, Catch::Matchers::WithinAbs(0.1, 1e-12));
    REQUIRE(mixed.mean_delta_dir_pp.has_value());
    CHECK(*mixed.mean_delta_dir_pp == 10.0);  // only the present value
    CHECK(mixed.dir_absent_count == 1);

    rrb::MetricReport other_k{"a3", 10, 0.0, std::nullopt, 0};
    CHECK_THROWS_AS(rrb::aggregate({r1, other_k}), rrb::Error);
}
