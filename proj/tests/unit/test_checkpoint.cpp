#include <string>

#include "support.hpp"
#include "tesu/checkpoint.hpp"

using namespace tesu;

namespace {

Checkpoint tiny() {
  Checkpoint c;
  c.tag = ComponentTag::kProjector;
  c.tensors.emplace_back("w", Tensor::from({2}, {1.0f, -2.0f}));
  return c;
}

}  // namespace

TEST_CASE("checkpoint byte layout") {
  const std::string bytes = serialize_checkpoint(tiny());
  const std::string expected = std::string("TESU") + std::string("\x01\x00\x00\x00", 4) + std::string("\x03", 1) +
                               std::string("\x01\x00\x00\x00", 4) + std::string("\x01\x00", 2) + "w" +
                               std::string("\x01", 1) + std::string("\x02\x00\x00\x00", 4) +
                               std::string("\x00\x00\x80\x3f", 4) + std::string("\x00\x00\x00\xc0", 4);
  CHECK(bytes == expected);
}

TEST_CASE("checkpoint round trips bitwise") {
  Checkpoint c = tiny();
  c.tensors.emplace_back("m", Tensor::from({2, 3}, {0.1f, 0.2f, 0.3f, -0.4f, 1e-7f, 3e5f}));
  set_config_hash(c, 0x0123456789abcdefULL);
  const std::string bytes = serialize_checkpoint(c);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.tag == ComponentTag::kProjector);
  CHECK(serialize_checkpoint(back) == bytes);
  REQUIRE(config_hash(back).has_value());
  CHECK(*config_hash(back) == 0x0123456789abcdefULL);
  CHECK(model_tensors(back).size() == 2);

  const auto dir = testing::scratch_dir("ckpt");
  save_checkpoint(dir / "c.ckpt", c);
  CHECK(serialize_checkpoint(load_checkpoint(dir / "c.ckpt")) == bytes);
}

TEST_CASE("config hash is replaced, not duplicated") {
  Checkpoint c = tiny();
  set_config_hash(c, 1);
  set_config_hash(c, 2);
  CHECK(c.tensors.size() == 2);
  CHECK(*config_hash(c) == 2);
  CHECK(!config_hash(tiny()).has_value());
}

TEST_CASE("malformed checkpoints are format errors") {
  const std::string good = serialize_checkpoint(tiny());
  CHECK_KIND(parse_checkpoint("XESU" + good.substr(4)), ErrorKind::kFormat);
  std::string version = good;
  version[4] = 2;
  CHECK_KIND(parse_checkpoint(version), ErrorKind::kFormat);
  std::string tag = good;
  tag[8] = 9;
  CHECK_KIND(parse_checkpoint(tag), ErrorKind::kFormat);
  CHECK_KIND(parse_checkpoint(good.substr(0, good.size() - 1)), ErrorKind::kFormat);
  CHECK_KIND(parse_checkpoint(good + "x"), ErrorKind::kFormat);
  CHECK_KIND(load_checkpoint("/nonexistent/dir/x.ckpt"), ErrorKind::kIo);
}
