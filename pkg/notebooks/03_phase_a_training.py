# %% [markdown]
# # Training on simulated speckle (phase A)
#
# Pairs of independent speckle realisations of the same clean scene serve as
# input and target.  The network never sees a clean image.  This is the
# desk-scale budget of the acceptance suite, about five minutes on one core.
# Much smaller runs do not yet beat the noisy input: the likelihood loss
# starts slowly from the identity.

# %%
import time

import numpy as np

from sardespeckle.checkpoint import Checkpoint, save_checkpoint
from sardespeckle.data import textured_scene
from sardespeckle.evaluation import psnr_protocol
from sardespeckle.pipeline import PhaseConfig, despeckle, train

N_SCENES, SIZE, EPOCHS = 8, 256, 10

clean = [textured_scene(SIZE, SIZE, 1000 + i) for i in range(N_SCENES)]
cfg = PhaseConfig(phase="A", epochs=EPOCHS, seed=0)
t0 = time.time()
report = train(cfg, None, clean, callback=lambda e, p, r: print(f"epoch {e:2d}  loss {r['loss']:.4f}  lr {r['lr']:g}"))
print(f"trained in {time.time() - t0:.0f} s")

# %% [markdown]
# Amplitude PSNR over 5 noisy copies of held-out scenes, before and after.

# %%
for i in range(2):
    test = textured_scene(128, 128, 5000 + i)
    noisy = psnr_protocol(test, lambda y: y, 1, 5, i)[0]
    restored = psnr_protocol(test, lambda y: despeckle(report.params, y), 1, 5, i)[0]
    print(f"scene {i}: noisy {noisy:.2f} dB  restored {restored:.2f} dB  gain {restored - noisy:+.2f} dB")

# %% [markdown]
# The checkpoint is the starting point of the next notebook.

# %%
save_checkpoint("phaseA.s2sw", Checkpoint(report.params))
