# %% [markdown]
# # What crosses the network
#
# The same estimators run as coordinator/worker message passing. Every
# payload is checked: no array may have a dimension other than 1, p or r,
# so rows of X or y can never leave a worker.

# %%
import json
import tempfile
from pathlib import Path

import numpy as np

from racedc import CovarianceSpec, LinearModelSpec, gen_linear_batches
from racedc.protocol import LinearSessionConfig, LocalPlan, run_linear_session

spec = LinearModelSpec(np.array([3.0, 2, 1, -1, -2, 0]), 0.25,
                       CovarianceSpec("equicorrelated", 0.9))
batches = gen_linear_batches(spec, N=50, m=80, seed=5)
cfg = LinearSessionConfig(plan=LocalPlan(kind="pce", r=5))

# %%
trace = Path(tempfile.mkdtemp()) / "trace.ndjson"
for method in ("race", "AV", "DC_pce"):
    result, stats = run_linear_session(batches, method, cfg, trace_path=trace)
    print(f"{method:7s} rounds={stats.rounds} upstream/worker={stats.upstream_scalars_per_worker:3d} "
          f"downstream/worker={stats.downstream_scalars:3d}  beta={np.round(result.beta, 3)}")

# %% [markdown]
# The last trace (two-round PCE) as written to disk:

# %%
kinds = {}
for line in trace.read_text().splitlines():
    rec = json.loads(line)
    kinds[(rec["round"], rec["kind"])] = kinds.get((rec["round"], rec["kind"]), 0) + 1
for (rnd, kind), count in sorted(kinds.items()):
    print(f"round {rnd}: {count:3d} x {kind}")
