# %% [markdown]
# # Training the toy policy to be concise
#
# 200 steps of leave-one-out policy gradient with the accuracy-gated
# conciseness reward, using the offline mock judge.

# %%
import numpy as np

from conciserl.evaluation import smooth_series
from conciserl.policy import SyntheticProblem, all_problems, sample
from conciserl.trainer import TrainConfig, train

cfg = TrainConfig(steps=200, seed=7)
state, logs = train(cfg, all_problems())

# %%
length = np.array([g.length_mean for g in logs])
acc = np.array([g.accuracy for g in logs])
print(f"steps   0-50: length {length[:50].mean():5.2f}  accuracy {acc[:50].mean():.3f}")
print(f"steps 150-200: length {length[150:].mean():5.2f}  accuracy {acc[150:].mean():.3f}")

# %% [markdown]
# Smoothed curves, every 20 steps.

# %%
sl, sa = smooth_series(length), smooth_series(acc)
kl = smooth_series([g.kl_initial for g in logs])
for i in range(0, 200, 20):
    print(f"step {i:>3}  length {sl[i]:5.2f}  accuracy {sa[i]:.3f}  KL to init {kl[i]:.3f}")

# %% [markdown]
# What the trained policy writes now:

# %%
for t in sample(SyntheticProblem(3, 4), state.params, n=4, seed=0):
    print(t.text)

# %% [markdown]
# Swapping the reward is a config change. The separated reward keeps
# accuracy and conciseness as two logged channels.

# %%
_, sep = train(TrainConfig(steps=40, seed=7, reward={"kind": "separated"}), all_problems())
print([round(g.reward_accuracy_mean, 3) for g in sep[::10]])
print([round(g.reward_conciseness_mean, 3) for g in sep[::10]])
