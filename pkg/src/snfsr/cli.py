"""Batch command line: degrade, train, sample, eval, dump-schedule, gradcheck."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import data, trainer
from .checks import TOLERANCE, gradcheck_suite
from .degradation import MODES, DegradationSpec, degrade, sample_spec
from .sampler import SampleRequest, sample
from .schedule import make_path, make_schedule
from .substrate import Rng, psnr, read_image, to_uint8, write_image

VERBS = ("degrade", "train", "sample", "eval", "dump-schedule", "gradcheck")

log = logging.getLogger("snfsr")


@dataclass
class Command:
    verb: str
    config: Path | None = None
    seed: int | None = None
    overrides: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snfsr", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="key = value config file")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("degrade", help="simulate LR images from a directory of HR PNGs")
    common(sp, config=False)
    sp.add_argument("--input", type=Path, required=True)
    sp.add_argument("--output", type=Path, required=True)
    sp.add_argument("--manifest", type=Path)
    sp.add_argument("--mode", choices=MODES, default="anisotropic_noisy")
    sp.add_argument("--scale", type=int, default=4)
    sp.add_argument("--sigma", type=float, help="fixed isotropic width (overrides --mode)")
    sp.add_argument("--noise", type=float, help="fixed noise level on the 0-255 scale")
    sp.add_argument("--downsample", choices=("decimate", "bicubic"), default="decimate")

    sp = sub.add_parser("train", help="joint training loop")
    common(sp)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="directory of HR PNGs")
    src.add_argument("--synthetic", type=int, metavar="N", help="use N procedural HR images")
    sp.add_argument("--synthetic-size", type=int, default=256)
    sp.add_argument("--manifest", type=Path)
    sp.add_argument("--output", type=Path, required=True)
    sp.add_argument("--resume", type=Path)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.add_argument("--lr", type=float, dest="learning_rate")
    sp.add_argument("--T", type=int)
    sp.add_argument("--scale", type=int, dest="scale_r")
    sp.add_argument("--lr-patch", type=int, dest="lr_patch")
    sp.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    sp.add_argument("--no-degrad-loss", action="store_const", const=False, dest="use_degrad")

    sp = sub.add_parser("sample", help="super-resolve LR PNGs with a trained checkpoint")
    common(sp, config=False)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--input", type=Path, required=True, help="LR PNG or directory of them")
    sp.add_argument("--output", type=Path, required=True)
    sp.add_argument("--gamma", type=int, default=50)
    sp.add_argument("--eta", type=float, default=1.0)
    sp.add_argument("--dump-steps", action="store_true", help="write one PNG per sampling step")

    sp = sub.add_parser("eval", help="PSNR table for SR/HR pairs matched by file name")
    common(sp, config=False)
    sp.add_argument("--sr", type=Path, required=True)
    sp.add_argument("--hr", type=Path, required=True)
    sp.add_argument("--output", type=Path, required=True)

    sp = sub.add_parser("dump-schedule", help="write t, beta, alpha, alpha_bar as CSV")
    common(sp)
    sp.add_argument("--T", type=int)
    sp.add_argument("--beta-start", type=float, dest="beta_start")
    sp.add_argument("--beta-end", type=float, dest="beta_end")
    sp.add_argument("--output", type=Path, help="output directory (stdout if omitted)")

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(sp, config=False)
    sp.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    sp.add_argument("--output", type=Path, help="optional directory for gradcheck.csv")
    return p


_CONFIG_KEYS = ("steps", "batch_size", "learning_rate", "T", "scale_r", "lr_patch",
                "checkpoint_every", "use_degrad", "beta_start", "beta_end")
_PATH_KEYS = ("input", "output", "manifest", "data", "resume", "checkpoint", "sr", "hr")


def parse_args(argv: list[str] | None = None) -> Command:
    ns = vars(_parser().parse_args(argv))
    cmd = Command(verb=ns.pop("verb"), config=ns.pop("config", None), seed=ns.pop("seed", None))
    for k in list(ns):
        if k in _CONFIG_KEYS:
            val = ns.pop(k)
            if val is not None:
                cmd.overrides[k] = val
        elif k in _PATH_KEYS:
            cmd.paths[k] = ns.pop(k)
    cmd.options = ns
    return cmd


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _run_degrade(cmd: Command) -> int:
    out = cmd.paths["output"]
    out.mkdir(parents=True, exist_ok=True)
    seed = cmd.seed if cmd.seed is not None else 0
    opts = cmd.options
    rng = Rng(seed)
    for path in data.list_images(cmd.paths["input"], cmd.paths.get("manifest")):
        hr = read_image(path)
        r = opts["scale"]
        hr = hr[:, : hr.shape[1] - hr.shape[1] % r, : hr.shape[2] - hr.shape[2] % r]
        img_rng = rng.spawn()
        if opts["sigma"] is not None:
            spec = DegradationSpec("isotropic", sigma=opts["sigma"], scale_r=r)
        else:
            spec = sample_spec(img_rng, opts["mode"], r)
        if opts["noise"] is not None:
            spec = dataclasses.replace(spec, noise_level=opts["noise"])
        lr = degrade(hr, spec, img_rng, opts["downsample"])
        write_image(lr, out / f"{path.stem}.png")
        _atomic_text(out / f"{path.stem}.txt",
                     spec.to_text() + f"downsample = {opts['downsample']}\nseed = {img_rng.seed}\n")
    return 0


def _run_train(cmd: Command) -> int:
    out = cmd.paths["output"]
    out.mkdir(parents=True, exist_ok=True)
    overrides = dict(cmd.overrides)
    if cmd.seed is not None:
        overrides["seed"] = cmd.seed
    if cmd.paths.get("resume"):
        state = trainer.load_checkpoint(cmd.paths["resume"])
        for k, v in overrides.items():
            setattr(state.config, k, v)
        cfg = state.config
    else:
        cfg = trainer.load_config(cmd.config, **overrides)
        state = trainer.init_state(cfg)
    if cmd.paths.get("data"):
        images = data.load_images(cmd.paths["data"], cmd.paths.get("manifest"))
    else:
        images = trainer.synthetic_images(cmd.options["synthetic"], cmd.options["synthetic_size"], cfg.seed)
    _atomic_text(out / "config.txt", trainer.config_to_text(cfg))
    remaining = max(cfg.steps - state.step, 0) if cmd.paths.get("resume") else cfg.steps
    trainer.train(state, trainer.DegradingSource(images, cfg), remaining,
                  log_path=out / "loss.csv", checkpoint_dir=out)
    trainer.save_checkpoint(state, out / "final.ckpt")
    return 0


def _run_sample(cmd: Command) -> int:
    out = cmd.paths["output"]
    out.mkdir(parents=True, exist_ok=True)
    state = trainer.load_checkpoint(cmd.paths["checkpoint"])
    path = make_path(state.schedule, cmd.options["gamma"], cmd.options["eta"])
    src = cmd.paths["input"]
    inputs = data.list_images(src) if src.is_dir() else [src]
    seed = cmd.seed if cmd.seed is not None else 0
    for k, p in enumerate(inputs):
        x_lr = read_image(p)
        dump = out / f"{p.stem}_steps" if cmd.options["dump_steps"] else None
        sr = sample(state.model, SampleRequest(x_lr, path, seed + k), state.schedule, dump)
        write_image(sr, out / f"{p.stem}.png")
    return 0


def _run_eval(cmd: Command) -> int:
    out = cmd.paths["output"]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for sr_path in data.list_images(cmd.paths["sr"]):
        hr_path = cmd.paths["hr"] / sr_path.name
        if not hr_path.exists():
            raise FileNotFoundError(f"no HR counterpart for {sr_path.name}")
        a = torch.from_numpy(to_uint8(read_image(sr_path)).astype(np.float64))
        b = torch.from_numpy(to_uint8(read_image(hr_path)).astype(np.float64))
        rows.append((sr_path.name, psnr(a, b, peak=255.0)))
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(("image", "psnr_db"))
    for name, val in rows:
        w.writerow((name, f"{val:.4f}"))
    if rows:
        w.writerow(("mean", f"{sum(v for _, v in rows) / len(rows):.4f}"))
    _atomic_text(out / "psnr.csv", buf.getvalue())
    return 0


def _run_dump_schedule(cmd: Command) -> int:
    cfg = trainer.load_config(cmd.config, **cmd.overrides)
    sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(("t", "beta", "alpha", "alpha_bar"))
    for t in range(1, sched.T + 1):
        w.writerow((t, repr(float(sched.beta[t - 1])), repr(float(sched.alpha[t - 1])),
                    repr(float(sched.alpha_bar[t - 1]))))
    if cmd.paths.get("output"):
        cmd.paths["output"].mkdir(parents=True, exist_ok=True)
        _atomic_text(cmd.paths["output"] / "schedule.csv", buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def _run_gradcheck(cmd: Command) -> int:
    dtype = getattr(torch, cmd.options["dtype"])
    rows = gradcheck_suite(dtype)
    lines = [f"{'PASS' if ok else 'FAIL'}  {name:<30s} rel_err={err:.3e}  tol={TOLERANCE[dtype]:.0e}"
             for name, err, ok in rows]
    print("\n".join(lines))
    if cmd.paths.get("output"):
        cmd.paths["output"].mkdir(parents=True, exist_ok=True)
        _atomic_text(cmd.paths["output"] / "gradcheck.csv",
                     "case,rel_err,passed\n" + "".join(f"{n},{e:.6e},{ok}\n" for n, e, ok in rows))
    return 0 if all(ok for _, _, ok in rows) else 1


_HANDLERS = {
    "degrade": _run_degrade,
    "train": _run_train,
    "sample": _run_sample,
    "eval": _run_eval,
    "dump-schedule": _run_dump_schedule,
    "gradcheck": _run_gradcheck,
}


def run(cmd: Command) -> int:
    try:
        return _HANDLERS[cmd.verb](cmd)
    except Exception as e:  # report and fail; never leave a zero exit on error
        print(f"snfsr {cmd.verb}: error: {e}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        cmd = parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    return run(cmd)


if __name__ == "__main__":
    sys.exit(main())
