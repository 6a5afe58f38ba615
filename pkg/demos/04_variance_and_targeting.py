"""Find the attributes discovered relations disagree on, then search only there."""

from mrforge import CostConfig, SearchConfig, covariance_eigenanalysis, discover, high_variance_attributes
from mrforge import parameter_matrix, targeted_discover
from mrforge.model import GridSpec

grid = GridSpec(nx=3, ny=3, nt=2)
cost_cfg = CostConfig.for_grid(grid, seed=0)
search_cfg = SearchConfig(seed=0)

found = discover(None, cost_cfg.layout, cost_cfg, search_cfg, n_target=2)
print("unrestricted search admitted", len(found.discovered()), "relations in", found.total_steps, "steps")

report = covariance_eigenanalysis(parameter_matrix(found), k=1)
for block, score in sorted(report.attribute_scores.items(), key=lambda kv: -kv[1]):
    print(f"  {block:<10} {score:.3f}")
print("top attributes:", high_variance_attributes(report, 5))

# the physical constants only enter through G/F, so mutating just those two
# slots should recover a joint rescaling quickly
gf = [("constants", 0), ("constants", 1)]
targeted = targeted_discover(None, gf, cost_cfg, search_cfg, n_target=1)
g = targeted.discovered()[0]
seg = cost_cfg.layout.segments
G, F = seg["G"].start, seg["F"].start
print(f"targeted search admitted {g.label} after {g.meta['admission_step']} steps")
print(f"  G -> {g.gamma[G, G]:.4f} G + {g.gamma[G, F]:.2e} F + {g.beta[G]:.2e}")
print(f"  F -> {g.gamma[F, G]:.2e} G + {g.gamma[F, F]:.4f} F + {g.beta[F]:.2e}")
