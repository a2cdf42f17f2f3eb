#include "common.hpp"

#include <kleinlab/rng.hpp>
#include <kleinlab/schottky.hpp>

#include <set>

using namespace kleinlab;

TEST(SchottkyGroup, RejectsInvalidDisks) {
    auto name_of = [](std::vector<DiskPair> pairs) {
        try {
            SchottkyGroup G(std::move(pairs));
        } catch (const ConfigError& e) {
            return e.name();
        }
        return std::string();
    };
    EXPECT_EQ(name_of({{{cplx(-2, 0), 1.0}, {cplx(2, 0), 1.0}, 0.0}}), "RankTooSmall");
    EXPECT_EQ(name_of(kltest::symmetric_pairs(1.5)), "OverlappingDisks");
    auto bad = kltest::symmetric_pairs(1.0);
    bad[0].from.radius = 0.0;
    EXPECT_EQ(name_of(bad), "DegeneratePair");
    std::vector<DiskPair> covered = {{{cplx(0, 0), 1.2}, {cplx(5, 0), 1.0}, 0.0},
                                     {{cplx(-5, 0), 1.0}, {cplx(0, 5), 1.0}, 0.0}};
    EXPECT_EQ(name_of(covered), "BasepointCovered");
    EXPECT_EQ(name_of(kltest::symmetric_pairs(1.2)), "");
}

TEST(SchottkyGroup, GeneratorsPairTheCircles) {
    SchottkyGroup G(kltest::symmetric_pairs(1.0));
    for (int i = 0; i < G.rank(); ++i) {
        const DiskPair& p = G.pairs()[i];
        const Mobius& g = G.generator(2 * i);
        for (int k = 0; k < 16; ++k) {
            cplx e = std::polar(1.0, 2 * M_PI * k / 16);
            cplx on = apply_boundary(g, BoundaryPoint::finite(p.from.center + p.from.radius * e)).z;
            EXPECT_NEAR(std::abs(on - p.to.center), p.to.radius, 1e-12);
            cplx in = apply_boundary(g, BoundaryPoint::finite(p.from.center + 3.0 * e)).z;
            EXPECT_TRUE(G.disk_of(2 * i).contains(in));
        }
        kltest::expect_mobius_near(compose(g, G.generator(2 * i + 1)), Mobius::identity(), 1e-13);
    }
    EXPECT_GT(G.contraction(), 0.0);
    EXPECT_LT(G.contraction(), 1.0);
}

TEST(SchottkyGroup, FuchsianDetection) {
    EXPECT_TRUE(SchottkyGroup(kltest::fuchsian_pairs()).is_fuchsian());
    EXPECT_FALSE(SchottkyGroup(kltest::symmetric_pairs(1.0)).is_fuchsian());
    auto twisted = kltest::fuchsian_pairs();
    twisted[0].twist = 0.4;
    EXPECT_FALSE(SchottkyGroup(twisted).is_fuchsian());
}

TEST(Words, EnumerationCountsAndReducedness) {
    SchottkyGroup G(kltest::symmetric_pairs(1.0));
    EXPECT_EQ(word_count(2, 0), 1);
    EXPECT_EQ(word_count(2, 1), 5);
    EXPECT_EQ(word_count(2, 3), 1 + 4 + 12 + 36);
    auto words = enumerate_words(G, 4);
    ASSERT_EQ(static_cast<long long>(words.size()), word_count(2, 4));
    EXPECT_TRUE(words.front().letters.empty());
    std::set<std::vector<int>> seen;
    for (const auto& w : words) {
        for (size_t i = 1; i < w.letters.size(); ++i) EXPECT_NE(w.letters[i], -w.letters[i - 1]);
        seen.insert(w.letters);
        if (!w.letters.empty()) kltest::expect_mobius_near(w.element.normalized(), word_element(G, w.letters), 1e-12);
    }
    EXPECT_EQ(seen.size(), words.size());
}

TEST(Words, NestedDisksShrinkAndNest) {
    SchottkyGroup G(kltest::symmetric_pairs(1.0));
    Rng rng(21, 0);
    for (int i = 0; i < 20; ++i) {
        auto w = random_reduced_word(G, 8, rng);
        Disk prev = nested_disk(G, {w[0]});
        for (size_t k = 2; k <= w.size(); ++k) {
            Disk d = nested_disk(G, std::vector<int>(w.begin(), w.begin() + k));
            EXPECT_LT(d.radius, prev.radius);
            EXPECT_LE(std::abs(d.center - prev.center) + d.radius, prev.radius * (1 + 1e-12));
            prev = d;
        }
    }
    EXPECT_THROW(nested_disk(G, {}), ConfigError);
}

TEST(Reduce, RecoversTheWordOfAGroupElement) {
    SchottkyGroup G(kltest::symmetric_pairs(1.0));
    Rng rng(22, 0);
    for (int i = 0; i < 200; ++i) {
        auto w = random_reduced_word(G, 1 + static_cast<int>(rng.below(6)), rng);
        Mobius h = compose(a_s(rng.uniform(-0.2, 0.2)), n_z(cplx(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1))));
        Mobius g = compose(word_element(G, w), h);
        Reduction r = reduce(G, g);
        double size = word_element(G, w).frobenius_sq();
        EXPECT_EQ(r.word, w);
        kltest::expect_mobius_near(r.rep, h, 1e-12 * size);
        kltest::expect_mobius_near(compose(word_element(G, r.word), r.rep), g, 1e-12 * size);
    }
}

TEST(Reduce, IdempotentAndStableUnderTheGroup) {
    SchottkyGroup G(kltest::fuchsian_pairs());
    Rng rng(23, 0);
    for (int i = 0; i < 200; ++i) {
        Mobius g = compose(a_s(rng.uniform(-3, 3)), n_z(cplx(rng.uniform(-2, 2), rng.uniform(-2, 2))));
        Reduction r = reduce(G, g);
        Reduction again = reduce(G, r.rep);
        EXPECT_TRUE(again.word.empty());
        EXPECT_EQ(again.rep.a, r.rep.a);
        EXPECT_EQ(again.rep.d, r.rep.d);
        Mobius gamma = word_element(G, random_reduced_word(G, 3, rng));
        kltest::expect_mobius_near(reduce(G, compose(gamma, g)).rep, r.rep, 1e-9);
    }
}

TEST(LimitSet, SamplesLieInGeneratingDisksAndAreSeeded) {
    SchottkyGroup G(kltest::symmetric_pairs(1.0));
    auto pts = sample_limit_set(G, 10, 200, 5);
    for (const auto& p : pts) {
        bool inside = false;
        for (const auto& D : G.disks()) inside = inside || D.contains(p.z);
        EXPECT_TRUE(inside);
    }
    auto again = sample_limit_set(G, 10, 200, 5);
    for (size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(pts[i].z, again[i].z);
    EXPECT_THROW(sample_limit_set(G, 0, 1, 5), ConfigError);
}

TEST(GroupTable, RoundTripAndErrors) {
    SchottkyGroup G(kltest::fuchsian_pairs());
    std::string text = group_table(G);
    EXPECT_EQ(text.substr(0, text.find('\n')), kTableHeader);
    SchottkyGroup H(parse_group_table(text));
    EXPECT_EQ(group_table(H), text);
    EXPECT_EQ(group_hash(H), group_hash(G));

    auto twisted = kltest::fuchsian_pairs();
    twisted[1].twist = 0.25;
    std::string ttext = group_table(SchottkyGroup(twisted));
    EXPECT_NE(ttext.find(",twist\n"), std::string::npos);
    EXPECT_EQ(parse_group_table(ttext)[1].twist, 0.25);

    EXPECT_THROW(parse_group_table(""), ConfigError);
    EXPECT_THROW(parse_group_table("a,b\n"), ConfigError);
    EXPECT_THROW(parse_group_table(std::string(kTableHeader) + "\n1,2,3\n"), ConfigError);
    EXPECT_THROW(parse_group_table(std::string(kTableHeader) + "\n1,2,x,4,5,6\n"), ConfigError);
    auto commented = parse_group_table("# note\n" + text);
    EXPECT_EQ(commented.size(), 2u);
}
