"""Let the search find relations nobody wrote down.

The dense search works on the whole flattened input, so it runs on a 3 x 3 grid
with two time steps (28 numbers per input).  Expect a few seconds per relation.
"""

import numpy as np

from mrforge import CostConfig, SearchConfig, discover, manual_catalogue, mr_distance
from mrforge.analysis import nearest_catalogue_match
from mrforge.model import GridSpec

grid = GridSpec(nx=3, ny=3, nt=2)
cost_cfg = CostConfig.for_grid(grid, seed=0)
found = discover(None, cost_cfg.layout, cost_cfg, SearchConfig(seed=0), n_target=2)

for trace in found.traces:
    print(f"search seed {trace.seed}: {len(trace)} steps, best cost {trace.final_cost:.2e}, {trace.status}")

ident = found.members[0]
for g in found.discovered():
    d = mr_distance(g, ident, cost_cfg.samples)
    print(f"{g.label}: cost {g.meta['cost']:.1e}, mean squared distance from identity {d:.3e}")

    # which rows of the input does the relation actually rearrange?
    gamma = g.gamma - np.eye(len(g.gamma))
    rows = np.abs(gamma).sum(axis=1) + np.abs(g.beta)
    touched = [cost_cfg.layout.block_of(i)[0] for i in np.argsort(-rows)[:5]]
    print("   most changed slots:", touched)

    best = nearest_catalogue_match(g, manual_catalogue(cost_cfg.layout), cost_cfg.samples)[0]
    print(f"   closest hand-written relation: {best[0]} (distance {best[1]:.2e})")

found.save("discovered.json")
