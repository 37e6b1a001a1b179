# %% [markdown]
# # Judge client
#
# The client speaks the chat-completions wire format. Here it talks to an
# in-process fake server, so nothing leaves the machine.

# %%
import tempfile
from pathlib import Path

import httpx

from conciserl.errors import BudgetExceededError, UnparseableReplyError
from conciserl.judge import JudgeCache, JudgeClient, JudgeConfig, parse_score

for reply in ("7", "Score: 7", "10/10", "I'd say it is quite tight"):
    try:
        print(repr(reply), "->", parse_score(reply))
    except UnparseableReplyError:
        print(repr(reply), "-> unparseable")

# %%
def fake_server(request):
    body = request.read().decode()
    score = 9 if "wait" not in body else 3
    return httpx.Response(200, json={
        "choices": [{"message": {"content": f"Score: {score}"}}],
        "usage": {"prompt_tokens": 180, "completion_tokens": 3},
    })


cache_file = Path(tempfile.mkdtemp()) / "verdicts.jsonl"
cfg = JudgeConfig(endpoint_url="http://localhost:9/v1", budget_cap=0.01)
items = [("\\boxed{7}", "What is 3 + 4?"), ("wait wait \\boxed{7}", "What is 3 + 4?")]

with JudgeClient(cfg, JudgeCache(cache_file), transport=httpx.MockTransport(fake_server), api_key="demo") as client:
    for v in client.score_many(items):
        print(v.score, v.normalized, f"cost {v.cost:.6f}", "cached" if v.from_cache else "live")
    print("live calls:", client.live_calls, "spend:", client.total_cost)

# %% [markdown]
# A second client replays from the cache file: no requests, no spend.

# %%
with JudgeClient(cfg, JudgeCache(cache_file), transport=httpx.MockTransport(fake_server), api_key="demo") as client:
    print([v.from_cache for v in client.score_many(items)], client.live_calls, client.total_cost)

# %% [markdown]
# Once spend reaches the cap, new traces are refused before any request.

# %%
broke = JudgeConfig(endpoint_url="http://localhost:9/v1", budget_cap=0.0)
with JudgeClient(broke, transport=httpx.MockTransport(fake_server), api_key="demo") as client:
    try:
        client.score_trace("step \\boxed{7}", "What is 3 + 4?")
    except BudgetExceededError as exc:
        print("refused:", exc)
