# %% [markdown]
# # Free energy, precision and adaptive thresholds
#
# A discrete belief over hidden states pays two costs for an observation:
# how far it sits from the exact posterior (KL) and how surprising the
# observation is under the model. The posterior removes the first term.

# %%
import numpy as np

from neurowater.inference import (
    DiscreteBelief,
    DiscreteGenerativeModel,
    PrecisionState,
    ThresholdState,
    discrete_free_energy,
    layer_free_energy,
    update_precision,
    update_threshold,
    weighted_error,
)

rng = np.random.default_rng(0)
joint = rng.uniform(0.05, 1.0, size=(4, 3))
joint /= joint.sum()
model = DiscreteGenerativeModel(joint)

for q in (DiscreteBelief(np.full(4, 0.25)), DiscreteBelief(model.posterior(1))):
    fe, kl, surprise = discrete_free_energy(q, model, 1)
    print(f"fe={fe:.4f}  KL={kl:.4f}  surprise={surprise:.4f}")

# %% [markdown]
# ## Precision tracks recent error spread
#
# Errors drawn with std 0.5 drive precision towards 1 / (0.25 + beta).

# %%
state = PrecisionState(beta=1e-3, alpha_var=0.95)
for e in rng.normal(0, 0.5, 2000):
    state = update_precision(state, float(e))
print("precision", round(state.precision, 3), "weighted error of 1.0:", round(weighted_error(state, 1.0), 3))
print("layer free energy at e=1:", round(layer_free_energy(state, 1.0, "standard"), 4))

# %% [markdown]
# ## The threshold forgets geometrically
#
# Feeding a constant weighted error c, the distance to c shrinks by alpha per step.

# %%
th = ThresholdState(tau=10.0, alpha=0.8, warmup_remaining=0)
for n in range(1, 6):
    th = update_threshold(th, 2.0)
    print(n, round(th.tau, 6), round(0.8 ** n * 8.0 + 2.0, 6))
