#include "annotator/taxonomy.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "annotator/errors.hpp"
#include "test_support.hpp"

using annotator::ParseError;
using annotator::Taxonomy;
using annotator::normalize_label;

namespace {

const char* kSmallTsv =
    "# comment line\n"
    "01\tMathematical Sciences\n"
    "\n"
    "04\tEarth Sciences\n"
    "0402\tgeochemistry\n"
    "15\tCommerce, Management, Tourism and Services\n";

}  // namespace

TEST(NormalizeLabel, LowercasesTrimsCollapsesAndStripsPunctuation) {
    EXPECT_EQ(normalize_label("  Earth   Sciences. "), "earth sciences");
    EXPECT_EQ(normalize_label("EARTH SCIENCES.,;:"), "earth sciences");
    EXPECT_EQ(normalize_label("engineering"), "engineering");
    EXPECT_EQ(normalize_label("a .;"), "a");
    EXPECT_EQ(normalize_label("..."), "");
    EXPECT_EQ(normalize_label("   "), "");
    EXPECT_EQ(normalize_label("Commerce, Management, Tourism and Services."),
              "commerce, management, tourism and services");
}

TEST(Taxonomy, TsvParsingPreservesOrderAndNormalizesLabels) {
    Taxonomy t = Taxonomy::from_text(kSmallTsv);
    ASSERT_EQ(t.size(), 3u);
    EXPECT_EQ(t.divisions()[0].code, "01");
    EXPECT_EQ(t.divisions()[0].label, "mathematical sciences");
    EXPECT_EQ(t.divisions()[1].code, "04");
    EXPECT_EQ(t.divisions()[2].label, "commerce, management, tourism and services");
    EXPECT_TRUE(t.has_division("04"));
    EXPECT_FALSE(t.has_division("02"));
    EXPECT_EQ(t.label_of("01"), "mathematical sciences");
    EXPECT_THROW(t.label_of("99"), annotator::Error);
    ASSERT_EQ(t.descendants().size(), 1u);
    EXPECT_EQ(t.descendants().at("0402"), "04");
}

TEST(Taxonomy, MatchLabelIsExactAfterNormalization) {
    Taxonomy t = Taxonomy::from_text(kSmallTsv);
    EXPECT_EQ(t.match_label("Earth Sciences."), "04");
    EXPECT_EQ(t.match_label("  earth   sciences  "), "04");
    EXPECT_EQ(t.match_label("earth"), std::nullopt);
    EXPECT_EQ(t.match_label("earth sciences and more"), std::nullopt);
    EXPECT_EQ(t.match_label("commerce, management, tourism and services"), "15");
    EXPECT_EQ(t.match_label(""), std::nullopt);
}

TEST(Taxonomy, DivisionOfChecksShapeAndMembership) {
    Taxonomy t = Taxonomy::from_text(kSmallTsv);
    EXPECT_EQ(t.division_of("0402"), "04");
    EXPECT_EQ(t.division_of("040203"), "04");
    EXPECT_EQ(t.division_of("01"), "01");
    EXPECT_THROW(t.division_of("9902"), annotator::Error);
    EXPECT_THROW(t.division_of("4"), annotator::Error);
    EXPECT_THROW(t.division_of("04a2"), annotator::Error);
}

TEST(Taxonomy, TsvErrors) {
    EXPECT_THROW(Taxonomy::from_text("01 no tab here"), ParseError);
    EXPECT_THROW(Taxonomy::from_text("123\tbad code width"), ParseError);
    EXPECT_THROW(Taxonomy::from_text("01\ta\n01\tb"), ParseError);
    EXPECT_THROW(Taxonomy::from_text("01\tsame\n02\tSAME"), ParseError);
    EXPECT_THROW(Taxonomy::from_text("01\t   "), ParseError);
    EXPECT_THROW(Taxonomy::from_text("# only comments\n"), ParseError);
    EXPECT_THROW(Taxonomy::from_text("0402\torphan descendant"), ParseError);
}

TEST(Taxonomy, DescendantMayPrecedeItsParent) {
    Taxonomy t = Taxonomy::from_text("0402\tgeochemistry\n04\tearth sciences\n");
    EXPECT_EQ(t.descendants().at("0402"), "04");
}

TEST(Taxonomy, JsonForm) {
    const char* json = R"({
        "scheme_id": "demo",
        "version": "1",
        "divisions": [
            {"code": "01", "label": "Mathematical Sciences"},
            {"code": "04", "label": "Earth Sciences"}
        ],
        "descendants": [{"code": "0402", "parent": "04"}]
    })";
    Taxonomy t = Taxonomy::from_text(json);
    EXPECT_EQ(t.scheme_id(), "demo");
    EXPECT_EQ(t.version(), "1");
    EXPECT_EQ(t.size(), 2u);
    EXPECT_EQ(t.label_of("04"), "earth sciences");
    EXPECT_EQ(t.descendants().at("0402"), "04");

    EXPECT_THROW(Taxonomy::from_text("{\"divisions\": 3}"), ParseError);
    EXPECT_THROW(Taxonomy::from_text("{not json"), ParseError);
    EXPECT_THROW(Taxonomy::from_text(
                     R"({"divisions":[{"code":"01","label":"a"}],
                         "descendants":[{"code":"0402","parent":"01"}]})"),
                 ParseError);
}

TEST(Taxonomy, FromFileReportsMissingPath) {
    EXPECT_THROW(Taxonomy::from_file("/nonexistent/taxonomy.tsv"), annotator::IoError);
}

TEST(Taxonomy, ShippedSchemeHasTwentyTwoDivisions) {
    auto path = testsupport::fixtures_dir() / "taxonomy/anzsrc_for_2008_divisions.tsv";
    Taxonomy t = Taxonomy::from_file(path.string());
    ASSERT_EQ(t.size(), 22u);
    EXPECT_EQ(t.divisions().front().code, "01");
    EXPECT_EQ(t.divisions().front().label, "mathematical sciences");
    EXPECT_EQ(t.divisions()[3].label, "earth sciences");
    EXPECT_EQ(t.divisions().back().code, "22");
    EXPECT_EQ(t.divisions().back().label, "philosophy and religious studies");
    EXPECT_EQ(t.label_of("15"), "commerce, management, tourism and services");
    EXPECT_FALSE(t.descendants().empty());
    for (const auto& [code, parent] : t.descendants()) EXPECT_TRUE(t.has_division(parent)) << code;
    // Distinct two-digit codes 01..22 in ascending order.
    for (size_t i = 0; i < t.size(); ++i) {
        int want = static_cast<int>(i) + 1;
        EXPECT_EQ(t.divisions()[i].code, (want < 10 ? "0" : "") + std::to_string(want));
    }
}
