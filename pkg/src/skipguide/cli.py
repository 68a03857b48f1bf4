"""Command-line entry point: ``python -m skipguide <verb> --config run.json``.

Verbs: train, sample, sweep, visualize, gradcheck, oracle-demo.
Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, RunConfig, load_config, parse_config
from .files import (atomic_write_bytes, export_frames, frame_grid, pgm_bytes, write_json,
                    write_loss_curve, write_metrics)
from .gradcheck import gradient_check
from .metrics import dynamics_proxy, flicker_score, sharpness_proxy
from .net import init_model
from .numerics import derive_stream
from .oracle import GaussianMixture, weaken
from .sampler import NetBinding, OracleBinding, SamplerRun, capture_one_step_predictions, sample
from .sweep import SweepSetup, sweep
from .toydata import make_dataset, stack_clips
from .training import train

log = logging.getLogger("skipguide")

# Stream ids of the run-level random draws. The high tag keeps them apart
# from the sampler's per-chain streams, which share the run seed.
_TAG = 0x5C << 56
STREAM_INIT, STREAM_DATA, STREAM_TRAIN, STREAM_REF, STREAM_GRAD = (_TAG | k for k in range(1, 6))

CHECKPOINT_NAME = "checkpoint.stg"


class RunError(RuntimeError):
    pass


def _dataset(cfg: RunConfig, n: int | None = None):
    n = cfg.data.n_clips if n is None else n
    return make_dataset(n, cfg.data.n_classes, derive_stream(cfg.seed, STREAM_DATA), cfg.data.clip_config())


def _load_model(cfg: RunConfig):
    ck = cfg.sampling.checkpoint or str(Path(cfg.out_dir) / CHECKPOINT_NAME)
    if not Path(ck).is_file():
        raise RunError(f"checkpoint not found: {ck}")
    model = checkpoint.load(ck)
    if model.arch != cfg.arch():
        raise RunError(f"checkpoint architecture {model.arch} does not match the config")
    return model


def oracle_mixture(cfg: RunConfig) -> GaussianMixture:
    """Equal-weight mixture centred on the first dataset clips, labelled by class."""
    clips = _dataset(cfg, cfg.oracle.n_components)
    videos, classes = stack_clips(clips)
    k = len(clips)
    return GaussianMixture(np.full(k, 1.0 / k), videos.reshape(k, -1),
                           np.full(k, cfg.oracle.variance), classes)


def _oracle_binding(cfg: RunConfig, sched):
    gm = oracle_mixture(cfg)
    cid = cfg.sampling.class_id
    main = gm if cid is None else gm.conditional(cid)
    weak = weaken(main, "inflate_variance", cfg.oracle.weak_inflate)
    return OracleBinding(sched, main, uncond=weaken(gm, "merge_to_marginal"),
                         weak=weak, weak_s=weak, weak_t=weak), main


def _binding_factory(cfg: RunConfig, sched):
    """(spec -> binding, sample shape, mixture or None)."""
    shape = cfg.arch().video_shape
    if cfg.sampling.denoiser == "oracle":
        binding, main = _oracle_binding(cfg, sched)
        return (lambda spec: binding), (int(np.prod(shape)),), main
    model = _load_model(cfg)
    return (lambda spec: NetBinding(model, cfg.sampling.class_id, spec)), shape, None


def _as_videos(x, cfg):
    return x.reshape(len(x), *cfg.arch().video_shape)


# -- verbs -------------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> dict:
    sched = cfg.schedule.build()
    data = _dataset(cfg)
    model = init_model(cfg.arch(), derive_stream(cfg.seed, STREAM_INIT))
    model, losses = train(model, data, sched, cfg.training, derive_stream(cfg.seed, STREAM_TRAIN))
    out = Path(cfg.out_dir)
    checkpoint.save(model, out / CHECKPOINT_NAME)
    write_loss_curve(losses, out / "loss_curve.csv")
    summary = {"steps": len(losses), "n_params": model.n_params,
               "initial_loss": losses[0] if losses else None,
               "final_loss": losses[-1] if losses else None,
               "final_loss_mean50": float(np.mean(losses[-50:])) if losses else None}
    write_json(out / "train_summary.json", summary)
    return summary


def cmd_sample(cfg: RunConfig) -> dict:
    sched = cfg.schedule.build()
    factory, shape, _ = _binding_factory(cfg, sched)
    run = SamplerRun(sched, cfg.guidance, factory(cfg.guidance), shape, cfg.sampling.n_samples,
                     cfg.seed, cfg.restart, cfg.sampling.trace_stride)
    x, trace = sample(run)
    videos = _as_videos(x, cfg)
    per = [{"flicker": flicker_score(v), "sharpness": sharpness_proxy(v), "dynamics": dynamics_proxy(v)}
           for v in videos]
    metrics = {"per_sample": per,
               "mean": {k: float(np.mean([p[k] for p in per])) for k in per[0]}}
    out = Path(cfg.out_dir)
    for i, v in enumerate(videos):
        export_frames(v, out / "samples" / f"sample_{i:04d}")
    atomic_write_bytes(out / "samples" / "grid.pgm", pgm_bytes(frame_grid(videos)))
    write_json(out / "trace_summary.json", trace.summary())
    write_json(out / "metrics.json", metrics)
    return metrics["mean"]


def cmd_sweep(cfg: RunConfig) -> dict:
    if not cfg.sweep.grid:
        raise ConfigError("sweep.grid", "must be non-empty")
    sched = cfg.schedule.build()
    factory, shape, mixture = _binding_factory(cfg, sched)
    n_ref = cfg.sweep.n_reference
    if mixture is not None:
        rng = np.random.default_rng(int(derive_stream(cfg.seed, STREAM_REF).key))
        reference = mixture.sample(n_ref, rng)
    else:
        cid = cfg.sampling.class_id
        clips = make_dataset(n_ref * cfg.data.n_classes, cfg.data.n_classes,
                             derive_stream(cfg.seed, STREAM_REF), cfg.data.clip_config())
        clips = [c for c in clips if cid is None or c.class_id == cid][:n_ref]
        reference = stack_clips(clips)[0]
    setup = SweepSetup(sched, factory, shape, reference, n_chains=cfg.sweep.n_chains, seed=cfg.seed,
                       mixture=mixture, coverage_group=None, restart=cfg.restart)
    rows = sweep(setup, cfg.sweep.grid)
    out = Path(cfg.out_dir)
    write_metrics(rows, out / "metrics.csv", out / "metrics.json")
    summary = {"rows": len(rows), "seed": cfg.seed, "n_chains": cfg.sweep.n_chains,
               "denoiser": cfg.sampling.denoiser}
    write_json(out / "sweep_summary.json", summary)
    return summary


def cmd_visualize(cfg: RunConfig) -> dict:
    t_list = cfg.sampling.t_list
    if not t_list:
        return {"written": 0}
    sched = cfg.schedule.build()
    factory, shape, _ = _binding_factory(cfg, sched)
    run = SamplerRun(sched, cfg.guidance, factory(cfg.guidance), shape, cfg.sampling.n_samples,
                     cfg.seed, cfg.restart, 0)
    preds = capture_one_step_predictions(run, t_list)
    out = Path(cfg.out_dir) / "visualize"
    written = 0
    for t, branches in zip(t_list, preds):
        for name, x in branches.items():
            videos = _as_videos(x, cfg)
            d = out / f"t{t:04d}" / name
            export_frames(videos[0], d)
            atomic_write_bytes(d / "grid.pgm", pgm_bytes(frame_grid(videos)))
            written += 1
    return {"written": written}


def cmd_gradcheck(cfg: RunConfig) -> dict:
    sched = cfg.schedule.build()
    model = init_model(cfg.arch(), derive_stream(cfg.seed, STREAM_INIT))
    errs = gradient_check(model, _dataset(cfg, 1), sched, derive_stream(cfg.seed, STREAM_GRAD),
                          p_uncond=cfg.training.p_uncond)
    worst = max(errs, key=errs.get)
    res = {"max_rel_error": errs[worst], "worst_tensor": worst, "n_tensors": len(errs)}
    print(f"max relative error {errs[worst]:.3e} ({worst}, {len(errs)} tensors)")
    if errs[worst] > 1e-5:
        raise RunError(f"gradient check failed: {errs[worst]:.3e} > 1e-5")
    return res


def cmd_oracle_demo(cfg: RunConfig) -> dict:
    from .experiments import diversity_sweeps, restart_moments, sharpening_run
    from .sampler import RestartConfig
    n = 10_000
    div = diversity_sweeps(n, cfg.seed)
    res = {
        "sharpening": sharpening_run(n, cfg.seed),
        "restart_K2": dict(zip(("mean", "var"), restart_moments(RestartConfig(20, 60, 2), n, cfg.seed))),
        "plain": dict(zip(("mean", "var"), restart_moments(None, n, cfg.seed))),
        "diversity": {k: [r.to_dict() for r in rows] for k, rows in div.items()},
    }
    s = res["sharpening"]
    print(f"sharpening: sample variance {s['sample_variance']:.4f}, closed form {s['closed_form']:.4f}")
    for k, rows in div.items():
        print(f"{k:8s} coverage " + " ".join(f"{r.mode_coverage:.3f}" for r in rows))
    write_json(Path(cfg.out_dir) / "oracle_demo.json", res)
    return {"written": "oracle_demo.json"}


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "visualize": cmd_visualize,
    "gradcheck": cmd_gradcheck,
    "oracle-demo": cmd_oracle_demo,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skipguide", description="Toy skip-guidance experiments.")
    ap.add_argument("verb", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run config (defaults are used when omitted)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", help="override the output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_config(args.config, args.seed, args.out)
        else:
            cfg = parse_config({}, args.seed, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return 1
    try:
        result = COMMANDS[args.verb](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit code 2
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
