"""A small reference-by-calibrator grid, as the command line `run` verb does.

The same grid can be launched with

    consensus-cal run --config grid.yaml --out results

where grid.yaml holds the keys shown in `consensus-cal run --dump-config`.
"""

# %%
from consensuscal import ExperimentConfig, run_experiment

cfg = ExperimentConfig(
    truth=["builtin:coffee", "builtin:chelsea"],
    scene_size=96,
    repetitions=3,
    master_seed=2024,
    calibrators=["linear", "ccmf"],
    perceptual=False,
)
table = run_experiment(cfg)

# %% Pooled means per (calibrator, reference).
for entry in table.summary():
    if entry["scene"] == "ALL":
        print(f"{entry['calibrator']:7s} {entry['reference']:16s} dPSNR {entry['delta_psnr']:+.3f} dB")
