// One Milstein trajectory of the Allen-Cahn equation with linear
// multiplicative noise. Prints the L2 norm and the mean radius of the zero
// level set every 10 steps.

#include <cstdio>

#include "spde/spde.hpp"

int main() {
  using namespace spde;
  const Mesh mesh = build_structured_mesh(2.0, 40, {-1.0, -1.0});
  const P1Space space(mesh);

  Model model;
  model.drift = DriftSpec::canonical(3);
  model.diffusion = DiffusionSpec::linear(0.1);

  SchemeConfig cfg;
  cfg.tau = 2e-3;
  cfg.T = 0.1;
  StepWorkspace ws(space, model, cfg);

  Field u = l2_project(TanhCircle{0.6, 0.04}, space);
  const BrownianPath path = generate_path(42, 0, cfg.steps(), cfg.tau);
  for (std::size_t n = 0; n <= path.size(); ++n) {
    if (n % 10 == 0) {
      const RadiusStats r = level_set_radius(zero_level_set(u));
      std::printf("t=%.3f  L2=%.6f  radius=%.6f\n", n * cfg.tau, norm(u, space, NormKind::kL2), r.mean);
    }
    if (n < path.size()) u = milstein_step(u, path.increments[n], ws);
  }
  return 0;
}
