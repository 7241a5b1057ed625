#include <doctest.h>

#include <set>

#include "reach/protocol.hpp"

using namespace reach;
using namespace reach::data;

namespace {

ProtocolConfig small_config(std::uint64_t seed) {
  ProtocolConfig c;
  c.squares = 3;
  c.train_per_square = 4;
  c.test_per_square = 2;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("protocol: counts, layout and determinism") {
  const GeneratedData a = generate_protocol(small_config(3));
  const GeneratedData b = generate_protocol(small_config(3));
  const GeneratedData c = generate_protocol(small_config(4));
  CHECK(a.train.size() == 12);
  CHECK(a.test.size() == 6);
  CHECK(a.manifest.episodes.size() == 18);

  std::set<std::string> ids;
  for (const auto* group : {&a.train, &a.test}) {
    for (const auto& e : *group) {
      CHECK(e.states.cols() == 120);
      CHECK(e.times.size() == 120);
      CHECK(ids.insert(e.meta.id).second);
      CHECK(e.meta.square_row * 7 + e.meta.square_col < 3);
      // The wrist ends on its square.
      const Eigen::Vector3d center = a.manifest.board.square_center(e.meta.square_row, e.meta.square_col);
      CHECK((e.target - center).cwiseAbs().maxCoeff() <= a.manifest.board.square / 2 + 1e-9);
      CHECK(e.meta.reach_time >= 1.4);
      CHECK(e.meta.reach_time <= 1.85);
      CHECK(e.target.norm() < a.manifest.arm.span());
    }
  }
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].states == b.train[i].states);
    CHECK(a.train[i].meta.id == b.train[i].meta.id);
  }
  CHECK(a.train[0].states != c.train[0].states);
}

TEST_CASE("protocol: every board square is reachable") {
  ProtocolConfig cfg;
  cfg.train_per_square = 1;
  cfg.test_per_square = 0;
  cfg.noise = imu::NoiseConfig::none();
  const GeneratedData d = generate_protocol(cfg);
  CHECK(d.train.size() == 42);
  std::set<std::pair<int, int>> squares;
  for (const auto& e : d.train) squares.insert({e.meta.square_row, e.meta.square_col});
  CHECK(squares.size() == 42);
}
