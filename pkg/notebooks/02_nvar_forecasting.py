# %% [markdown]
# # Forecasting with delay embeddings and a ridge readout
#
# With linear features only, the forecaster is a plain autoregression, so a
# noiseless AR(2) series hands back its coefficients.

# %%
import numpy as np

from neurowater.forecast import NvarSpec, forecast, hourly_daily_mape, train_nvar
from neurowater.series import GeneratorConfig, generate_consumption

x = [1.0, 2.0]
for _ in range(2000):
    x.append(0.5 * x[-1] - 0.3 * x[-2])
model = train_nvar(np.array(x), NvarSpec(delays=2, degree=1, ridge_lambda=1e-8))
print("recovered lag weights:", model.linear_weights)

# %% [markdown]
# ## Quadratic features capture a logistic map

# %%
y = [0.2]
for _ in range(600):
    y.append(3.7 * y[-1] * (1 - y[-1]))
quad = train_nvar(np.array(y), NvarSpec(delays=1, degree=2, ridge_lambda=0.0))
print("bias, linear, square:", np.round(quad.weights, 6))

# %% [markdown]
# ## Hourly versus daily error on synthetic demand
#
# Hour-level noise averages out over a day, so daily sums are much easier to
# predict than single hours.

# %%
demand = np.asarray(generate_consumption(GeneratorConfig(days=60, noise_std=20.0, seed=3)).samples())
scores = hourly_daily_mape(demand[:45 * 24], demand[45 * 24:], NvarSpec(delays=24, ridge_lambda=1e-6))
for name, rows in scores.items():
    print(f"{name:15s} hourly {rows['hourly'].mape_percent:6.2f}%  daily {rows['daily'].mape_percent:5.2f}%")

# %%
daily_model = train_nvar(demand.reshape(-1, 24).sum(axis=1)[:45], NvarSpec(delays=7, ridge_lambda=1e-3))
print("next 3 daily totals:", np.round(forecast(daily_model, demand.reshape(-1, 24).sum(axis=1)[:45], 3), 1))
