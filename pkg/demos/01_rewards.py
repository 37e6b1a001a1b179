# %% [markdown]
# # Reward variants
#
# Every reward takes a binary correctness signal `a` and, for the
# judge-based variants, a conciseness score `s` in 1..10 (normalized to
# `c = s / 10`). Length-based baselines look at the trace length instead.

# %%
import numpy as np

from conciserl.rewards import (
    ConcisenessScore,
    CosineParams,
    alpha_penalty_reward,
    cosine_reward,
    reward_gated,
    reward_pure,
    reward_separated,
)

# %% [markdown]
# A correct, fairly tight trace (s = 8) versus a wrong one with the same score.

# %%
c = ConcisenessScore(8)
for a in (1, 0):
    print(f"a={a}  pure={reward_pure(c).scalar:.2f}  gated={reward_gated(a, c).scalar:.2f}  "
          f"separated={reward_separated(a, c).scalar:.2f} {reward_separated(a, c).components}")

# %% [markdown]
# The gated reward never needs a score for a wrong trace, so training can
# skip the judge call entirely:

# %%
print(reward_gated(0, None))

# %% [markdown]
# ## Cosine length schedule
#
# Correct traces decay from 2.0 at length 0 to 1.0 at the budget; wrong
# traces climb from -10 to 0; anything over budget gets -10.

# %%
p = CosineParams()
for L in (0, 3584, 7168, 10752, 14336, 14337):
    print(f"L={L:>6}  correct={cosine_reward(1, L, p):7.3f}  wrong={cosine_reward(0, L, p):7.3f}")

# %% [markdown]
# ## Group-relative length penalty
#
# Among the correct traces of one rollout group, longer-than-average ones
# lose up to `alpha` of their reward.

# %%
group = [120, 180, 300, 600]
for alpha in (0.1, 0.4):
    rs = [alpha_penalty_reward(1, L, group, alpha) for L in group]
    print(f"alpha={alpha}:", np.round(rs, 3))
