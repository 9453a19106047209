#include "gormpo/io.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace gormpo;

namespace {
std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("array container round trip preserves every field") {
  ArrayFile af(1);
  Mat m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  af.put_f64("weights", m);
  af.put_f32("data", m);
  af.put_i64("starts", {0, 5, 9});
  af.put_u8("flags", {1, 0, 1});
  af.put_string("env_id", "toywean");
  af.put_scalar("tau", -3.5);

  auto path = tmp_path("gormpo_io_test.gpac");
  af.save(path);
  ArrayFile back = ArrayFile::load(path, 1);
  REQUIRE(back.get_mat("weights") == m);
  REQUIRE(back.get_mat("data") == m);  // integers survive f32
  REQUIRE(back.get_i64("starts") == std::vector<int64_t>{0, 5, 9});
  REQUIRE(back.get_u8("flags") == std::vector<uint8_t>{1, 0, 1});
  REQUIRE(back.get_string("env_id") == "toywean");
  REQUIRE(back.get_scalar("tau") == -3.5);
  std::remove(path.c_str());
}

TEST_CASE("version mismatch is rejected") {
  ArrayFile af(2);
  af.put_scalar("x", 1.0);
  auto path = tmp_path("gormpo_io_version.gpac");
  af.save(path);
  REQUIRE_THROWS_AS(ArrayFile::load(path, 1), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("missing field names the field") {
  ArrayFile af(1);
  af.put_scalar("present", 1.0);
  REQUIRE_THROWS_WITH(af.get_scalar("absent"), Catch::Matchers::ContainsSubstring("absent"));
}

TEST_CASE("truncated file yields a format error, not a partial load") {
  ArrayFile af(1);
  af.put_f64("big", Mat::Ones(100, 100));
  auto path = tmp_path("gormpo_io_trunc.gpac");
  af.save(path);
  auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full / 2);
  REQUIRE_THROWS_AS(ArrayFile::load(path, 1), FormatError);
  std::remove(path.c_str());
}
