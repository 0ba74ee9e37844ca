# %% [markdown]
# # Training on image pairs with changes (phases B and C)
#
# Two acquisitions of the same area differ by speckle and by real changes.
# Subtracting the estimated log-reflectivity of the target date and adding
# that of the input date removes the changes from the target, leaving only
# speckle that the network can learn to ignore.

# %%
import numpy as np

from sardespeckle.data import ChangeModel, simulate_time_series, textured_scene
from sardespeckle.evaluation import wasserstein_to_fisher_tippett
from sardespeckle.pipeline import PhaseConfig, compensate_change, despeckle, train
from sardespeckle.speckle import log_transform

# %% [markdown]
# With perfect estimates, the compensated target differs from the first
# date's log-reflectivity by pure log-speckle.

# %%
scene = textured_scene(256, 256, 3)
ts = simulate_time_series(scene, 2, 1, ChangeModel(fraction=0.1), rng=0)
lx1, lx2 = (np.log(r.values) for r in ts.reflectivities)
target = compensate_change(log_transform(ts.images[1]).values, lx1, lx2)
print("changed pixels at date 2:", ts.change_masks[1].mean().round(3))
print("W1 of residual to log-speckle:", round(wasserstein_to_fisher_tippett(target - lx1, 1), 4))
print("W1 without compensation:      ", round(wasserstein_to_fisher_tippett(log_transform(ts.images[1]).values - lx1, 1), 4))

# %% [markdown]
# Phases B and C at toy scale, starting from the phase-A checkpoint written
# by the previous notebook.  Phase B uses pre-estimates computed on 2x
# subsampled images for compensation; phase C refreshes them with the
# current network at full resolution.

# %%
from sardespeckle.checkpoint import load_checkpoint

a = load_checkpoint("phaseA.s2sw").params
series = [simulate_time_series(textured_scene(128, 128, 50 + i), 6, 1, ChangeModel(), rng=i) for i in range(4)]
b = train(PhaseConfig(phase="B", epochs=4, seed=0, pairs_per_series=6), a, series).params
c = train(PhaseConfig(phase="C", epochs=2, lr=1e-4, seed=0, pairs_per_series=6), b, series).params
for step in c.metadata["chain"]:
    print(step)

# %%
est = despeckle(c, series[0].images[0])
ref = series[0].reflectivities[0].values
print("mean intensity, restored / true:", round(est.values.mean() / ref.mean(), 3))
print("1st and 99th percentile of the restored image:", np.percentile(est.values, [1, 99]).round(3))
