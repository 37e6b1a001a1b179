# %% [markdown]
# # Benchmark metrics from recorded traces
#
# The package ships per-problem records (token count and correctness) that
# reproduce the published per-dataset numbers for the trained 1.5B model and
# its full-reasoning reference.

# %%
from conciserl.evaluation import (
    aggregate_by_dataset,
    average_row,
    difficulty_breakdown,
    display_round,
    load_dataset,
    outcomes_from_traces,
)
from conciserl.fixtures import published_path, published_tables
from conciserl.io import read_jsonl

problems = load_dataset(published_path("datasets.jsonl"))
ref = outcomes_from_traces(problems, read_jsonl(published_path("full_reasoning.jsonl")), "provided")
ours = outcomes_from_traces(problems, read_jsonl(published_path("conciserl.jsonl")), "provided")
metrics = aggregate_by_dataset(ours, ref)

for name, m in metrics.items():
    print(f"{name:<12} acc {display_round(m.accuracy_pct):>5}  len {m.mean_length:>7.0f}  "
          f"len% {m.length_pct_of_reference:7.3f} -> {display_round(m.length_pct_of_reference)}")

# %% [markdown]
# Dataset averages are unweighted and computed before any rounding.

# %%
acc = average_row([m.accuracy_pct for m in metrics.values()])
print(acc, "->", display_round(acc))

# %% [markdown]
# Per-level breakdown. Only the easiest MATH500 level is shipped as raw
# records; the other cells come from the transcribed tables.

# %%
lvl = load_dataset(published_path("math500_level1.jsonl"))
rows = read_jsonl(published_path("math500_level1_conciserl_separated.jsonl"))
s = difficulty_breakdown(outcomes_from_traces(lvl, rows, "provided"))[1]
print(f"level 1: acc {display_round(s.accuracy_pct, 2)}  len {display_round(s.mean_length, 2)}  n={s.count}")

levels = published_tables()["math500_by_level"]["rows"]["ConciseRL"]["acc"]
mean = average_row(levels)
print(f"level average {mean!r} -> {display_round(mean, 2):.2f}")
