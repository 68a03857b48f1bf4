"""Train the reference toy model and freeze the values the tests check against.

    python scripts/train_reference.py            # writes runs/reference and tests/data/
"""
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from skipguide import checkpoint
from skipguide.cli import main as cli_main
from skipguide.config import load_config
from skipguide.experiments import alignment_experiment, noised_probes
from skipguide.net import init_model
from skipguide.numerics import derive_stream
from skipguide.toydata import make_dataset

ROOT = Path(__file__).resolve().parents[1]
PROBE_SEED = 7
FRESH_SEED = 99


def main():
    cfg_path = ROOT / "configs" / "reference.json"
    out = ROOT / "runs" / "reference"
    if cli_main(["train", "--config", str(cfg_path), "--out", str(out)]) != 0:
        sys.exit("training failed")
    cfg = load_config(cfg_path)
    model = checkpoint.load(out / "checkpoint.stg")
    losses = np.loadtxt(out / "loss_curve.csv", delimiter=",", skiprows=1)[:, 1]

    fresh = init_model(model.arch, derive_stream(FRESH_SEED, 1))
    clips = make_dataset(64, cfg.data.n_classes, derive_stream(PROBE_SEED, 1), cfg.data.clip_config())
    probes = noised_probes(clips, cfg.schedule.build(), derive_stream(PROBE_SEED, 2), 100)
    skip, other = alignment_experiment(model, fresh, probes, class_id=0)

    data = ROOT / "tests" / "data"
    data.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(out / "checkpoint.stg", data / "reference.stg")
    frozen = {
        "initial_loss": float(losses[0]),
        "final_loss": float(losses[-1]),
        "first20_mean": float(losses[:20].mean()),
        "last50_mean": float(losses[-50:].mean()),
        "probe_seed": PROBE_SEED,
        "fresh_seed": FRESH_SEED,
        "alignment_fraction": float((skip > other).mean()),
        "alignment_skip_mean": float(skip.mean()),
        "alignment_fresh_mean": float(other.mean()),
    }
    (data / "reference_frozen.json").write_text(json.dumps(frozen, indent=2) + "\n")
    print(json.dumps(frozen, indent=2))


if __name__ == "__main__":
    main()
