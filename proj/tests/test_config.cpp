#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "tabl/config.hpp"
#include "tabl/errors.hpp"

using namespace tabl;

namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, SectionsValuesAndComments) {
  const auto cfg = KeyValueConfig::parse(R"(# header
seed = 7
name = "setup one"   # trailing comment
[train]
lr = 0.005
epochs = 40
verbose = true
ranks = [1, 2, 3]
[data]
stocks = 1:3
)");
  EXPECT_EQ(cfg.get_uint("seed", 0), 7u);
  EXPECT_EQ(cfg.get_string("name", ""), "setup one");
  EXPECT_DOUBLE_EQ(cfg.get_double("train.lr", 0), 0.005);
  EXPECT_EQ(cfg.get_int("train.epochs", 0), 40);
  EXPECT_TRUE(cfg.get_bool("train.verbose", false));
  EXPECT_EQ(cfg.get_uint_list("train.ranks", {}), (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(cfg.get_uint_list("data.stocks", {}), (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(cfg.get_uint("missing", 9), 9u);
  EXPECT_FALSE(cfg.get("missing").has_value());
  EXPECT_EQ(cfg.get_list("train.ranks").size(), 3u);
}

TEST(Config, DumpRoundTrips) {
  const auto cfg = KeyValueConfig::parse("b = 2\na = \"x y\"\n[s]\nk = [4,5]\n");
  const auto again = KeyValueConfig::parse(cfg.dump());
  EXPECT_EQ(again.entries(), cfg.entries());
  EXPECT_EQ(again.dump(), cfg.dump());
}

TEST(Config, Errors) {
  const std::string dup = message_of([] { KeyValueConfig::parse("a = 1\na = 2\n", "run.toml"); });
  EXPECT_NE(dup.find("run.toml:2"), std::string::npos) << dup;
  EXPECT_THROW(KeyValueConfig::parse("just words\n"), ParseError);
  EXPECT_THROW(KeyValueConfig::parse("[open\n"), ParseError);

  const auto cfg = KeyValueConfig::parse("n = abc\nneg = -3\nflag = maybe\n");
  EXPECT_THROW(cfg.get_uint("n", 0), ConfigError);
  EXPECT_THROW(cfg.get_uint("neg", 0), ConfigError);
  EXPECT_THROW(cfg.get_bool("flag", false), ConfigError);
  EXPECT_THROW(cfg.get_double("n", 0), ConfigError);
  const std::string req = message_of([&] { cfg.require("train.lr"); });
  EXPECT_NE(req.find("train.lr"), std::string::npos);

  EXPECT_NO_THROW(cfg.reject_unknown({"n", "neg", "flag"}));
  EXPECT_NO_THROW(cfg.reject_unknown({"n*", "flag"}));
  EXPECT_THROW(cfg.reject_unknown({"n", "flag"}), ConfigError);
  EXPECT_THROW(KeyValueConfig::load("/nonexistent/dir/x.toml"), IoError);
}

TEST(Config, DoubleAcceptsInfinity) {
  const auto cfg = KeyValueConfig::parse("limit = inf\n");
  EXPECT_TRUE(std::isinf(cfg.get_double("limit", 0)));
}

TEST(UintList, Forms) {
  EXPECT_EQ(parse_uint_list("3"), (std::vector<std::uint64_t>{3}));
  EXPECT_EQ(parse_uint_list("1,4,2"), (std::vector<std::uint64_t>{1, 4, 2}));
  EXPECT_EQ(parse_uint_list("2-4"), (std::vector<std::uint64_t>{2, 3, 4}));
  EXPECT_EQ(parse_uint_list("0:2"), (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_THROW(parse_uint_list("4-2"), ConfigError);
  EXPECT_THROW(parse_uint_list("x"), ConfigError);
}

TEST(Errors, ExitCodesAreDistinct) {
  EXPECT_EQ(exit_code(ErrorCategory::shape), 10);
  EXPECT_EQ(exit_code(ErrorCategory::io), 16);
  EXPECT_EQ(std::string(ShapeError("bad").what()), "shape error: bad");
}
