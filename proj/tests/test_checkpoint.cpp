#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "intuit/checkpoint.hpp"
#include "intuit/reasoner.hpp"
#include "intuit/worldgen.hpp"

using namespace intuit;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint save/load/save is byte identical on random models") {
  Vocab v = WorldConfig{}.vocab();
  ModelDims dims;
  dims.vocab = v.size();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    PolicyModel m = PolicyModel::init(dims, rng);
    std::string p1 = "ckpt_a.bin", p2 = "ckpt_b.bin";
    checkpoint::save(p1, m.named_params());

    checkpoint::Loaded loaded = checkpoint::load(p1);
    PolicyModel m2 = PolicyModel::init(dims, rng);
    checkpoint::restore(m2.named_params(), loaded);
    checkpoint::save(p2, m2.named_params());

    REQUIRE(slurp(p1) == slurp(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
  }
}

TEST_CASE("checkpoint head shape round trips") {
  Vocab v = WorldConfig{}.vocab();
  ModelDims dims;
  dims.vocab = v.size();
  Rng rng(4);
  PolicyModel m = PolicyModel::init(dims, rng);
  checkpoint::save("ckpt_head.bin", m.named_params(), {64, 4});
  checkpoint::Loaded loaded = checkpoint::load("ckpt_head.bin");
  REQUIRE(loaded.head.rows == 64);
  REQUIRE(loaded.head.cols == 4);
  std::remove("ckpt_head.bin");
}

TEST_CASE("checkpoint rejects bad files") {
  {
    std::ofstream f("ckpt_bad.bin", std::ios::binary);
    f << "NOTMAGIC plus junk";
  }
  REQUIRE_THROWS_AS(checkpoint::load("ckpt_bad.bin"), TensorError);
  REQUIRE_THROWS_AS(checkpoint::load("no_such_file.bin"), TensorError);
  std::remove("ckpt_bad.bin");
}

TEST_CASE("restore rejects mismatched shapes") {
  Vocab v = WorldConfig{}.vocab();
  ModelDims dims;
  dims.vocab = v.size();
  Rng rng(4);
  PolicyModel m = PolicyModel::init(dims, rng);
  checkpoint::save("ckpt_shape.bin", m.named_params());
  checkpoint::Loaded loaded = checkpoint::load("ckpt_shape.bin");

  ModelDims other = dims;
  other.vocab = dims.vocab + 1;
  Rng rng2(5);
  PolicyModel m2 = PolicyModel::init(other, rng2);
  REQUIRE_THROWS_AS(checkpoint::restore(m2.named_params(), loaded),
                    DimensionError);
  std::remove("ckpt_shape.bin");
}
