# %% [markdown]
# # The toy policy
#
# A tabular next-token model over a 22-token vocabulary: STEP, FILLER
# ("wait"), nineteen answer tokens and END. Problems are single-digit
# additions. The initial policy prefers FILLER, so it starts out verbose.

# %%
import numpy as np

from conciserl.judge import mock_judge
from conciserl.policy import (
    PolicyParams,
    SyntheticProblem,
    enumerate_traces,
    logprob,
    logprob_grad,
    oracle_accuracy,
    sample,
)

params = PolicyParams.initial(seed=0)
problem = SyntheticProblem(3, 4)
print(problem.prompt, "gold:", problem.gold)

# %%
traces = sample(problem, params, n=6, seed=1)
for t in traces:
    print(f"{t.length:>2} tokens  acc={oracle_accuracy(t, problem)}  judge={mock_judge(t):>2}  {t.text}")

# %% [markdown]
# Sampled log-probabilities agree with the exact table lookup.

# %%
print(max(abs(t.logprob - logprob(t, problem, params)) for t in traces))

# %% [markdown]
# ## Gradient check
#
# The analytic gradient of a trace's log-probability against central
# differences on a handful of touched logits.

# %%
t = traces[0]
g = logprob_grad(t, problem, params)
h = 1e-6
for idx in list(zip(*np.nonzero(g)))[:5]:
    x = params.logits.copy()
    x[idx] += h
    up = logprob(t, problem, PolicyParams(x))
    x[idx] -= 2 * h
    down = logprob(t, problem, PolicyParams(x))
    print(tuple(int(i) for i in idx), f"analytic {g[idx]: .6f}  numeric {(up - down) / (2 * h): .6f}")

# %% [markdown]
# ## Exact enumeration
#
# For short horizons every trace can be listed; the probabilities sum to one.

# %%
total = sum(np.exp(lp) for _, lp in enumerate_traces(problem, params, max_len=2))
print(f"{total:.12f}")
