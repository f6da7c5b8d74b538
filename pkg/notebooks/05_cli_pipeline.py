# %% [markdown]
# # The command line pipeline
#
# generate, simulate and report can be chained. With a fixed seed the
# outputs are byte-identical from run to run.

# %%
import json
import tempfile
from pathlib import Path

from neurowater.cli import main

work = Path(tempfile.mkdtemp())
scenario = work / "small.yaml"
scenario.write_text("seed: 7\ndays: 10\ntrain_days: 14\ntopology: {n_fogs: 2, edges_per_fog: 3}\n")

main(["generate", "--config", str(scenario), "--out", str(work / "data")])
main(["simulate", "--scenario", str(scenario), "--data", str(work / "data"), "--mode", "both",
      "--out-metrics", str(work / "metrics.json"), "--out-log", str(work / "events.csv")])
main(["report", "--metrics", str(work / "metrics.json")])

# %%
metrics = json.loads((work / "metrics.json").read_text())
print(sorted(metrics))
print(main(["forecast", "--input", str(work / "data" / "meter-000.csv"), "--train-frac", "0.8"]))
