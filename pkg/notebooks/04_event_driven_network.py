# %% [markdown]
# # Event-driven versus periodic reporting
#
# Edges receive forecasts from their fog node and only speak up when the
# precision-weighted error clears an adaptive threshold. The periodic
# baseline ships every reading.

# %%
from dataclasses import replace

from neurowater.netsim import EVENT_DRIVEN, PERIODIC
from neurowater.scenario import default_scenario, run_report

sc = replace(default_scenario(), days=20)
report, logs = run_report(sc, [EVENT_DRIVEN, PERIODIC], with_forecasts=False)

for mode, run in report["runs"].items():
    print(f"{mode:13s} up={run['messages_up']:5d} down={run['messages_down']:5d} bytes_up={run['bytes_up']}")
for key, value in sorted(report["comparison"].items()):
    print(f"{key:28s} {value:.3f}")

# %% [markdown]
# Downward forecasts cost bytes too, so the byte ratio can exceed one even
# while upward chatter falls by more than an order of magnitude.

# %%
print("\n".join(logs[EVENT_DRIVEN][:8]))
