# %% [markdown]
# # Speckle statistics
#
# Fully developed speckle multiplies the reflectivity by a unit-mean gamma
# variable with shape L (the number of looks).  Taking logs turns it into an
# additive term whose mean and variance are known in closed form.

# %%
import numpy as np

from sardespeckle import Image, corrupt, log_speckle_bias, log_speckle_var, sample_speckle
from sardespeckle.evaluation import wasserstein_to_fisher_tippett, wasserstein_to_gamma

# %% [markdown]
# Sample moments against theory for a few look counts.

# %%
for looks in (1, 2, 4, 8):
    s = sample_speckle(1000, 1000, looks, looks).values
    ls = np.log(s)
    print(
        f"L={looks}: mean {s.mean():.4f} (1)  var {s.var():.4f} ({1 / looks:.4f})  "
        f"log-mean {ls.mean():+.4f} ({log_speckle_bias(looks):+.4f})  "
        f"log-var {ls.var():.4f} ({log_speckle_var(looks):.4f})"
    )

# %% [markdown]
# The log-domain mean is negative: averaging log-intensities underestimates
# the log-reflectivity, which is why the squared-error loss needs debiasing.
#
# Distances of the samples to their theoretical laws:

# %%
s = sample_speckle(1000, 100, 1, 0).values
print("W1 to gamma(1):          ", round(wasserstein_to_gamma(s, 1), 4))
print("W1 of log to log-speckle:", round(wasserstein_to_fisher_tippett(np.log(s), 1), 4))

# %% [markdown]
# Corrupting a clean scene keeps its mean (speckle has unit mean) but the
# pixel-to-pixel fluctuation equals the signal itself at L = 1.

# %%
x = Image.reflectivity(np.full((200, 200), 3.0))
y = corrupt(x, 1, 1)
print("mean", y.values.mean().round(3), "std", y.values.std().round(3))
