#include <doctest.h>

#include <limits>
#include <sstream>

#include "boat/csv.hpp"
#include "boat/types.hpp"

using namespace boat;

TEST_CASE("vector helpers") {
  const Point2 a{3.0, 4.0};
  CHECK(norm(a) == 5.0);
  CHECK(dot(a, {1.0, 0.0}) == 3.0);
  CHECK(cross({1.0, 0.0}, {0.0, 1.0}) == 1.0);
  CHECK(left_normal({1.0, 0.0}) == Point2{0.0, 1.0});
  CHECK(mirror_z(a) == Point2{3.0, -4.0});
}

TEST_CASE("polygon measures on a unit square") {
  const Polyline ccw{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  CHECK(closed_length(ccw) == 4.0);
  CHECK(signed_area(ccw) == 1.0);
  const Polyline cw(ccw.rbegin(), ccw.rend());
  CHECK(signed_area(cw) == -1.0);
  CHECK(point_in_polygon(ccw, {0.5, 0.5}));
  CHECK_FALSE(point_in_polygon(ccw, {1.5, 0.5}));
  CHECK(is_simple(ccw));

  const Polyline bowtie{{0, 0}, {1, 1}, {1, 0}, {0, 1}};
  CHECK_FALSE(is_simple(bowtie));

  const auto cum = cumulative_length({{0, 0}, {3, 4}, {3, 5}});
  REQUIRE(cum.size() == 3);
  CHECK(cum[1] == 5.0);
  CHECK(cum[2] == 6.0);
}

TEST_CASE("segment intersection") {
  CHECK(segments_intersect({{0, 0}, {2, 2}}, {{0, 2}, {2, 0}}));
  CHECK(segments_intersect({{0, 0}, {1, 0}}, {{1, 0}, {1, 1}}));
  CHECK_FALSE(segments_intersect({{0, 0}, {1, 0}}, {{0, 1}, {1, 1}}));
}

TEST_CASE("csv reader tracks rows and skips blank lines") {
  std::istringstream in("\xEF\xBB\xBF" "a,b\r\n1, 2\n\n3,4\n");
  CsvReader r(in);
  r.expect_header("a,b");
  auto row = r.next();
  REQUIRE(row);
  CHECK(row->at(1) == "2");
  CHECK(r.row() == 2);
  row = r.next();
  REQUIRE(row);
  CHECK(r.row() == 4);
  CHECK_FALSE(r.next());
}

TEST_CASE("csv header mismatch is a row-1 parse error") {
  std::istringstream in("x,y\n");
  CsvReader r(in);
  try {
    r.expect_header("a,b");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.row() == 1);
  }
}

TEST_CASE("strict number parsing") {
  CHECK(parse_double(" 1.25 ", 3, "x") == 1.25);
  CHECK_THROWS_AS(parse_double("1.2.3", 3, "x"), ParseError);
  CHECK_THROWS_AS(parse_double("", 3, "x"), ParseError);
  CHECK_THROWS_AS(parse_double("inf", 3, "x"), ParseError);
  CHECK(parse_int("7", 1, "n") == 7);
  CHECK_THROWS_AS(parse_int("7.5", 1, "n"), ParseError);
  CHECK_FALSE(parse_optional_double("  ", 1, "p").has_value());
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 1651.9842, 6.02214076e23}) {
    CHECK(parse_double(format_double(v), 1, "v") == v);
  }
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_double(0.0) == "0");
}

TEST_CASE("FNV-1a reference vectors") {
  CHECK(ContentHash{}.hex() == "cbf29ce484222325");
  CHECK(ContentHash{}.add(std::string_view("a")).hex() == "af63dc4c8601ec8c");
  CHECK(ContentHash{}.add(std::string_view("foobar")).hex() == "85944171f73967e8");
}
