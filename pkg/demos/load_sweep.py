# %% [markdown]
# Gains vs load on the indoor 4 GHz desk layout
#
# Calibrate the baseline arrival rate to 10% and 40% RU, run all three
# schemes at each rate with the same seeds, and print mean / 5th-percentile
# UPT gains. Short windows and 3 seeds keep this to a few minutes, so
# expect a few percent of seed noise. The acceptance suite uses 10 seeds.

# %%
from compsim import calibrate_ru, gains, pool, preset_config, run_many

window = dict(warmup_ttis=1000, measure_ttis=5000, min_transfers=150)
seeds = (1, 2, 3)

for n_tx in (2, 4):
    cfg = preset_config("InH4GHz", n_tx=n_tx, **window)
    for target in (0.1, 0.4):
        lam = calibrate_ru(cfg, target, 0.02, seeds).lambda_per_s
        res = {s: pool([r.summary for r in run_many(cfg.with_(scheme=s, lambda_per_s=lam), seeds)])
               for s in ("baseline", "dps", "ncjt")}
        line = f"n_tx={n_tx} RU {target:.0%} (lambda {lam:.0f}/s):"
        for s in ("dps", "ncjt"):
            mg, eg = gains(res[s], res["baseline"])
            line += f"  {s} mean {mg:+5.1f}% edge {eg:+5.1f}%"
        print(line, flush=True)
