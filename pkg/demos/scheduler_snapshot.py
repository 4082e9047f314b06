# %% [markdown]
# One cluster, one TTI: the scheduler's hypothesis list
#
# Two TRPs and two UEs. The DPS list holds every single-TRP assignment,
# blanks included. The NC-JT list appends the joint options. Blanking (DPB)
# is not a separate mode: it wins whenever silencing a TRP raises the PF sum.

# %%
import numpy as np

from compsim.scenario import CoordinationCluster
from compsim.scheduler import LinkContext, SchemeMode, enumerate_hypotheses, select_hypothesis

rng = np.random.default_rng(3)
cl = CoordinationCluster(0, (0, 1))
ues = [10, 11]
gain = {(0, 10): 1.0, (1, 10): 0.8, (0, 11): 0.3, (1, 11): 0.05}
channels = {k: g * (rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))) / np.sqrt(2)
            for k, g in gain.items()}
r = {u: 0.01 * np.eye(4) for u in ues}
avg = {10: 2e7, 11: 2e7}

# %%
for mode in (SchemeMode.DPS, SchemeMode.NCJT):
    ctx = LinkContext(channels, r, 1.0, 20e6)
    hyps = enumerate_hypotheses(cl, ues, ctx, avg, mode)
    print(f"--- {mode.value}: {len(hyps)} hypotheses")
    for h in hyps:
        slots = ["blank" if a is None else f"UE{a.ue_id} r{a.rank}" for a in h.assignments]
        print(f"  {h.mode_tag:5s} {slots}  pf={h.pf_value:.3f}")
    best = select_hypothesis(hyps)
    print("  chosen:", best.mode_tag, [None if a is None else a.ue_id for a in best.assignments])

# %%
# Starve UE 11 of throughput and the choice moves toward serving it.
avg[11] = 2e5
ctx = LinkContext(channels, r, 1.0, 20e6)
best = select_hypothesis(enumerate_hypotheses(cl, ues, ctx, avg, SchemeMode.NCJT))
print("starved UE 11 ->", best.mode_tag, [None if a is None else a.ue_id for a in best.assignments])
