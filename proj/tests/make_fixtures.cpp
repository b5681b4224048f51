// Writes the golden fixtures under tests/fixtures. Run once; the files are then frozen.
#include <filesystem>
#include <iostream>
#include <random>

#include "impnet/nets.hpp"
#include "impnet/tensor_io.hpp"

using namespace impnet;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <dir>\n";
    return 1;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);
  const Params params = Params::initialize(ModelSpec::desk(), 7, InitOptions{false});
  save_params(dir / "desk_seed7.impp", params);

  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0, 1);
  auto image = [&] {
    Tensor t(3, 16, 16);
    for (auto& v : t.data()) v = u(rng);
    return t;
  };
  const Tensor a = image(), b = image();
  save_tensor(dir / "image_a.impt", a);
  save_tensor(dir / "image_b.impt", b);
  const Tensor feat = feature_forward(a, params);
  save_tensor(dir / "feature_a.impt", feat);
  const FlowOutput fo = flow_forward(a, b, params);
  save_tensor(dir / "flow_ab.impt", fo.flow);
  save_tensor(dir / "scale_ab.impt", fo.scale);
  save_tensor(dir / "quality_a.impt", quality_forward(feat, params));
  return 0;
}
