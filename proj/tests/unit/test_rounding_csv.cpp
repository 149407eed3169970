#include <gtest/gtest.h>

#include <vector>

#include "at_case.hpp"
#include "csrm/csv.hpp"
#include "csrm/rounding.hpp"

using namespace csrm;

TEST(Rounding, HalfUpOnDecimalSpelling) {
  // 0.105 and 0.1225 are stored just below their decimal spelling.
  EXPECT_EQ(format_fixed(round_half_up(0.105, 2), 2), "0.11");
  EXPECT_EQ(format_fixed(round_half_up(0.1225, 2), 2), "0.12");
  EXPECT_EQ(format_fixed(round_half_up(0.459, 2), 2), "0.46");
  EXPECT_EQ(format_fixed(round_half_up(0.504, 2), 2), "0.50");
  EXPECT_EQ(format_fixed(round_half_up(0.125, 2), 2), "0.13");
  EXPECT_EQ(format_fixed(round_half_up(0.00918, 2), 2), "0.01");
  EXPECT_EQ(format_fixed(round_half_up(0.0504, 2), 2), "0.05");
}

TEST(Rounding, AtLevelsDisplayAsInTheLevelsTable) {
  std::vector<std::string> shown;
  for (double v : at::levels) shown.push_back(format_value(v, RoundingMode::paper_compat));
  EXPECT_EQ(shown, (std::vector<std::string>{"0.46", "0.11", "0.12", "0.50", "0.11"}));
  EXPECT_EQ(format_value(displayed_sum(at::levels, RoundingMode::paper_compat), RoundingMode::paper_compat),
            "1.30");
}

TEST(Rounding, PaperAggregateIsSumOfRoundedValues) {
  std::vector<double> after{0.00918, 0.107, 0.1225, 0.0504, 0.105};
  EXPECT_EQ(format_value(displayed_sum(after, RoundingMode::paper_compat), RoundingMode::paper_compat), "0.40");
  // Rounding the full-precision sum instead would print 0.39.
  double full = displayed_sum(after, RoundingMode::full);
  EXPECT_NEAR(full, at::grl_after, 1e-15);
  EXPECT_EQ(format_fixed(round_half_up(full, 2), 2), "0.39");
}

TEST(Rounding, FullModeKeepsAtLeastSixSignificantDigits) {
  EXPECT_EQ(format_full(0.1225), "0.1225");
  EXPECT_EQ(format_full(1.0 / 3.0), "0.3333333333");
  EXPECT_EQ(format_full(0.45899999999999996), "0.459");
}

TEST(Rounding, NegativeZeroIsPrintedUnsigned) {
  EXPECT_EQ(format_fixed(-0.001, 2), "0.00");
  EXPECT_EQ(format_fixed(round_half_up(-0.004, 2), 2), "0.00");
}

TEST(Rounding, ExactFormatRoundTrips) {
  for (double v : {0.1, 0.45899999999999996, 1e-17, 0.3333333333333333}) {
    EXPECT_EQ(std::stod(format_exact(v)), v);
  }
}

TEST(Rounding, ModeNames) {
  EXPECT_EQ(parse_rounding_mode("paper-compat"), RoundingMode::paper_compat);
  EXPECT_EQ(parse_rounding_mode("full"), RoundingMode::full);
  EXPECT_THROW(parse_rounding_mode("exact"), Error);
}

TEST(Csv, QuotedCellsCommentsAndBlankLines) {
  auto rows = csv::parse("# header comment\nid,name\n\nc1,\"Digital, signature\"\n  c2 , \"say \"\"hi\"\"\" \n");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].cells, (std::vector<std::string>{"c1", "Digital, signature"}));
  EXPECT_EQ(rows[2].cells, (std::vector<std::string>{"c2", "say \"hi\""}));
  EXPECT_EQ(rows[2].line, 5);
}

TEST(Csv, JoinEscapesWhatParseReads) {
  std::vector<std::string> cells{"a,b", "q\"x", "plain", ""};
  auto rows = csv::parse(csv::join(cells) + "\n");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].cells, cells);
}

TEST(Csv, StrictNumbers) {
  EXPECT_EQ(csv::parse_number("0.25"), 0.25);
  EXPECT_EQ(csv::parse_number(" 1 "), std::nullopt);
  EXPECT_EQ(csv::parse_number("0.2x"), std::nullopt);
  EXPECT_EQ(csv::parse_number(""), std::nullopt);
  EXPECT_EQ(csv::parse_number("nan"), std::nullopt);
}
