"""
Replaying an agent conversation from the response cache
=======================================================

The agent talks to a chat model through two tools. Here the model is a
scripted transport; its replies land in the on-disk cache, so a second
run with no transport at all replays the same transcript byte for byte.
"""

# %%
from __future__ import annotations

import tempfile

import numpy as np

from spatialground import resolve, run_agent
from spatialground.agent import Budget
from spatialground.chat import ChatClient, ResponseCache, ScriptedTransport
from spatialground.geometry import PointCloud

rng = np.random.default_rng(1)
objects = [
    ("chair", (0.0, 0.0, 0.45), (0.5, 0.5, 0.9)),
    ("chair", (4.0, 3.5, 0.45), (0.5, 0.5, 0.9)),
    ("table", (-2.0, 0.0, 0.38), (1.6, 0.9, 0.76)),
    ("window", (2.2, 0.0, 1.3), (1.2, 0.12, 1.2)),
]
names = sorted({o[0] for o in objects})
pts, ids = [], []
for name, centre, ext in objects:
    n = max(60, int(3000 * np.prod(ext)))
    pts.append(np.asarray(centre) - np.asarray(ext) / 2 + rng.random((n, 3)) * ext)
    ids.append(np.full(n, names.index(name)))
scene = PointCloud(np.vstack(pts), label_ids=np.concatenate(ids), label_names=names)
query = "a chair between the table and window"


def reply(action: str) -> str:
    return ("OBSERVATION: Looking at the tool output.\nREASONING: Compare candidates to the landmarks.\n"
            f"PLAN: Next step.\nSELF-CRITIQUE: Keep tool inputs to short noun phrases.\nACTION: {action}")


script = [
    reply('target_finder("chair")'),
    reply('landmark_finder("table", relation="between")'),
    reply('landmark_finder("window", relation="between")'),
    reply("final_answer(0)"),
]

# %%
# First run: the scripted model answers and every reply is cached.
cache = ResponseCache(tempfile.mkdtemp())
res1, tr1 = run_agent(query, scene, ChatClient(model="scripted", cache=cache,
                                               transport=ScriptedTransport(script)))
print(res1.outcome, np.round(res1.box.centroid, 2) + 0.0)
for step in tr1.steps:
    print(step.round, step.action)

# %%
# Second run: no transport, cache only. The transcript is identical.
res2, tr2 = run_agent(query, scene, ChatClient(model="scripted", cache=cache))
print("identical transcript:", tr1.to_json() == tr2.to_json())

# %%
# With a budget of two rounds the scripted model never answers, so the
# agent falls back to the deterministic resolver's choice.
res3, _ = run_agent(query, scene, ChatClient(model="scripted", cache=cache), budget=Budget(max_rounds=2))
print(res3.outcome, res3.box == resolve(query, scene).box)
