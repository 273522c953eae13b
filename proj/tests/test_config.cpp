#include <doctest.h>

#include "lmscale/config.hpp"
#include "lmscale/error.hpp"
#include "scratch.hpp"

using namespace lmscale;

TEST_CASE("defaults round trip through INI") {
  const Config d = Config::defaults();
  const Config back = Config::parse(d.to_ini());
  CHECK(back.to_ini() == d.to_ini());
  CHECK(back.hash() == d.hash());
  CHECK(d.hash().size() == 64);
  CHECK(d.lag_list().size() == 512);
  CHECK(d.lag_list().front() == 1);
}

TEST_CASE("partial files override only what they name") {
  const Config c = Config::parse("[covstats]\nlags = 1,2,4\n\n[fit]\ngrid_step = 0.005\nmask_outliers = off\n");
  CHECK(c.lag_list() == std::vector<std::uint32_t>{1, 2, 4});
  CHECK(c.grid_step == 0.005);
  CHECK_FALSE(c.mask_outliers);
  CHECK(c.vocab_size == 8192);
  CHECK(c.hash() != Config::defaults().hash());

  ScratchDir dir("config");
  write_text(dir / "c.ini", c.to_ini());
  CHECK(Config::load(dir / "c.ini").hash() == c.hash());
  CHECK_THROWS_AS(Config::load(dir / "absent.ini"), ConfigError);
}

TEST_CASE("bad files are rejected") {
  CHECK_THROWS_AS(Config::parse("[fit]\nnot_a_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[nowhere]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[fit]\ngrid_step = fine\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[fit]\ngrid_step = -1\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[fit]\noutlier_window = 4\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[fit]\nmask_outliers = maybe\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[tokenizer]\nvocab_size = 100\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[tokenizer]\nsplit = paragraph\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[covstats]\nlags = 0..4\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[theory]\nshape = wobbly\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[collapse]\nscan_beta = 1:2\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[fit\n"), ConfigError);
}

TEST_CASE("set validates before committing") {
  Config c;
  c.set("fit.min_ratio", "5");
  CHECK(c.min_ratio == 5);
  c.set("tokenizer.split", "line");
  CHECK(c.split.mode == DocumentSplit::Mode::line);
  const auto before = c.hash();
  CHECK_THROWS_AS(c.set("fit.min_ratio", "-1"), ConfigError);
  CHECK_THROWS_AS(c.set("fit.nope", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("min_ratio", "1"), ConfigError);
  CHECK(c.hash() == before);
}

TEST_CASE("grids") {
  const auto g = parse_grid("0.3:0.4:0.05");
  REQUIRE(g.size() == 3);
  CHECK(g[0] == doctest::Approx(0.3));
  CHECK(g[2] == doctest::Approx(0.4));
  CHECK(parse_grid("0.5") == std::vector<double>{0.5});
  CHECK(parse_grid(Config::defaults().scan_gamma).size() == 146);
  CHECK_THROWS_AS(parse_grid("a:b:c"), ConfigError);
  CHECK_THROWS_AS(parse_grid("1:2"), ConfigError);
}
