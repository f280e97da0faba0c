"""Command-line entry point: ``cloudrain <command> [options]``.

Exit codes: 0 success, 1 validation failure (bad data, a failed check,
a diverged run), 2 usage error (bad flags, unreadable config, missing
files).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .errors import CloudRainError, InvalidInputError, UsageError

OUT_ENV = "CLOUDRAIN_OUT"
log = logging.getLogger("cloudrain")


class _Run:
    """Bookkeeping for one invocation: output dir, inputs and written files."""

    def __init__(self, command, cfg: RunConfig, out: Path, argv):
        self.command, self.cfg, self.out, self.argv = command, cfg, out, list(argv)
        self.inputs, self.outputs = {}, {}
        out.mkdir(parents=True, exist_ok=True)

    def add_input(self, path: Path):
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        h = hashlib.sha256()
        for f in files:
            h.update(f.name.encode())
            h.update(f.read_bytes())
        self.inputs[str(path)] = h.hexdigest()

    def write_text(self, name, text):
        path = self.out / name
        path.write_text(text, newline="")
        self.outputs[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def figure(self, name, fn, *args):
        if not self.cfg.plots:
            return
        try:
            fn(*args, self.out / name)
            self.outputs[name] = None
        except Exception as exc:  # a broken figure must never cost the CSVs
            log.warning("could not render %s: %s", name, exc)

    def finish(self, status):
        self.write_text(f"{self.command}.config.txt", self.cfg.to_text())
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "status": status,
            "config_hash": self.cfg.digest(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "versions": {"cloudrain": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
        }
        (self.out / f"{self.command}.manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])
    return buf.getvalue()


def _split(cfg: RunConfig):
    from .data import synthetic_split

    return synthetic_split(cfg.n_train, cfg.n_test, cfg.seed, n_points=cfg.points,
                           raw_points=cfg.raw_points, extents=cfg.extents,
                           extent_jitter=cfg.extent_jitter, n_objects=cfg.objects,
                           symmetry=cfg.symmetry)


def _clouds(run: _Run, data_dir, part: str):
    from .data import load_dataset

    if data_dir is None:
        train, test = _split(run.cfg)
        return train if part == "train" else test
    path = Path(data_dir) / part
    if not path.is_dir():
        raise UsageError(f"{path} is not a directory")
    run.add_input(path)
    return load_dataset(path)


def _checkpoint(run: _Run, path):
    from .model import load_checkpoint

    if path is None:
        raise UsageError("--checkpoint is required")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint {path} not found")
    run.add_input(path)
    return load_checkpoint(path)


# --------------------------------------------------------------------------
# commands


def cmd_gen(run: _Run, args) -> int:
    from .data import save_dataset

    train, test = _split(run.cfg)
    for part, clouds in (("train", train), ("test", test)):
        for p in save_dataset(clouds, run.out / part):
            run.outputs[f"{part}/{p.name}"] = hashlib.sha256(p.read_bytes()).hexdigest()
    print(f"wrote {len(train)} train and {len(test)} test clouds to {run.out}")
    return 0


def cmd_train(run: _Run, args) -> int:
    from .model import SegModel, TrainConfig, save_checkpoint, train
    from .plotting import plot_history

    cfg = run.cfg
    clouds = _clouds(run, args.data, "train")
    model = SegModel(encoder=cfg.encoder, head=cfg.head, kinds=cfg.kinds,
                     canonicalize=cfg.canonicalize, in_dim=3, seed=cfg.seed)
    tcfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                       optimizer=cfg.optimizer, seed=cfg.seed, aug_scale=cfg.aug_scale,
                       aug_jitter=cfg.aug_jitter, aug_reflect=cfg.aug_reflect)
    history = train(model, clouds, tcfg,
                    log=lambda r: log.info("epoch %d loss %.4f mAcc %.4f", r["epoch"], r["loss"],
                                           r["macc"]))
    save_checkpoint(model, run.out / "checkpoint.npz")
    run.outputs["checkpoint.npz"] = hashlib.sha256(
        (run.out / "checkpoint.npz").read_bytes()).hexdigest()
    run.write_text("history.csv", _csv(("epoch", "loss", "macc", "miou"), history))
    run.figure("history.png", plot_history, history)
    last = history[-1]
    print(f"trained {model.n_params()} parameters; final loss {last['loss']:.4f}, "
          f"train mAcc {last['macc']:.4f}")
    return 0


def cmd_eval(run: _Run, args) -> int:
    from .evaluation import dataset_confusion, macc, miou

    model = _checkpoint(run, args.checkpoint)
    clouds = _clouds(run, args.data, "test")
    cm = dataset_confusion(model, clouds)
    row = dict(n_clouds=len(clouds), macc=macc(cm), miou=miou(cm))
    run.write_text("metrics.csv", _csv(("n_clouds", "macc", "miou"), [row]))
    print(f"mAcc {row['macc']:.4f}  mIOU {row['miou']:.4f}  ({len(clouds)} clouds)")
    return 0


def cmd_reflect_eval(run: _Run, args) -> int:
    from .evaluation import invariance_report
    from .plotting import plot_invariance_report

    model = _checkpoint(run, args.checkpoint)
    clouds = _clouds(run, args.data, "test")
    report = invariance_report(model, clouds, n_trials=run.cfg.n_trials, seed=run.cfg.seed)
    run.write_text("reflect_report.csv", report.to_csv())
    run.figure("reflect_report.png", plot_invariance_report, report)
    for name, s in report.summary().items():
        print(f"{name:>5}: dmAcc {s['dmacc_abs']:+.2f} pp  dmIOU {s['dmiou_abs']:+.2f} pp  "
              f"max logit diff {s['max_logit_diff']:.3g}")
    if report.n_degenerate:
        print(f"excluded {report.n_degenerate} degenerate clouds")
    # a model that claims invariance must show none of the drops it is immune to
    claimed = set()
    if model.is_reflection_invariant:
        claimed.update(("x", "y", "z", "xyz"))
        if model.canonicalize:
            claimed.add("plane")
    broken = [r for r in report.rows if r.transform in claimed
              and (r.dmacc_abs != 0.0 or r.dmiou_abs != 0.0)]
    if broken:
        print(f"invariance violated for: {sorted({r.transform for r in broken})}", file=sys.stderr)
        return 1
    return 0


def cmd_gadget_bench(run: _Run, args) -> int:
    from .gadgets import gadget_bench
    from .plotting import plot_gadget_bench

    cfg = run.cfg
    rows = gadget_bench(cfg.gadget_eps, cfg.gadget_delta, n_samples=cfg.gadget_samples,
                        seed=cfg.seed)
    run.write_text("gadget_bench.csv",
                   _csv(("eps_or_delta", "backend", "units", "params", "sup_error"), rows))
    run.figure("gadget_bench.png", plot_gadget_bench, rows)
    failed = []
    for r in rows:
        print(f"{r['backend']:>18} {r['eps_or_delta']:<8g} units {r['units']:>5} "
              f"params {r['params']:>6} sup error {r['sup_error']:.3g}")
        limit = 1e-12 if r["backend"] == "quadratic-multiplier" else r["eps_or_delta"]
        if r["sup_error"] > limit:
            failed.append(r["backend"])
    if failed:
        print(f"error bound exceeded: {sorted(set(failed))}", file=sys.stderr)
        return 1
    return 0


def cmd_grad_check(run: _Run, args) -> int:
    from .neurons import grad_check, init_conventional, init_quadratic

    cfg = run.cfg
    layers = {
        "conventional-relu": init_conventional(5, 4, cfg.seed, "relu"),
        "conventional-identity": init_conventional(5, 4, cfg.seed, "identity"),
        "quadratic-relu": init_quadratic(5, 4, cfg.seed, False, "relu"),
        "quadratic-identity": init_quadratic(5, 4, cfg.seed, False, "identity"),
        "quadratic-strict-relu": init_quadratic(5, 4, cfg.seed, True, "relu"),
    }
    rows = []
    for name, layer in layers.items():
        rep = grad_check(layer, n_trials=cfg.grad_trials, h=cfg.grad_h, tolerance=cfg.grad_tol,
                         seed=cfg.seed)
        rows.append(dict(layer=name, n_trials=rep.n_trials, n_checked=rep.n_checked,
                         max_rel_error=rep.max_rel_error, passed=int(rep.passed)))
        print(f"{name:>22}: max rel error {rep.max_rel_error:.3g} "
              f"({'ok' if rep.passed else 'FAIL'})")
    run.write_text("grad_check.csv",
                   _csv(("layer", "n_trials", "n_checked", "max_rel_error", "passed"), rows))
    return 0 if all(r["passed"] for r in rows) else 1


COMMANDS = {
    "gen": (cmd_gen, "generate a synthetic train/test split as CSV clouds"),
    "train": (cmd_train, "train a segmentation model; writes checkpoint and history"),
    "eval": (cmd_eval, "score a checkpoint on the test split"),
    "reflect-eval": (cmd_reflect_eval, "measure metric drops under reflections"),
    "gadget-bench": (cmd_gadget_bench, "size and accuracy of the multiplication gadgets"),
    "grad-check": (cmd_grad_check, "finite-difference check of layer gradients"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                        help="key = value run configuration")
    common.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS,
                        help="overrides the config seed")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS,
                        help=f"output directory (else ${OUT_ENV}, else config out_dir)")
    common.add_argument("--no-plots", action="store_true", default=argparse.SUPPRESS,
                        help="write CSVs only")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = _Parser(prog="cloudrain", parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name in ("train", "eval", "reflect-eval"):
            p.add_argument("--data", metavar="DIR",
                           help="dataset from `cloudrain gen` (default: generate from config)")
        if name in ("eval", "reflect-eval"):
            p.add_argument("--checkpoint", metavar="PATH", help="checkpoint.npz from train")
    return parser


def resolve_config(args) -> RunConfig:
    path = getattr(args, "config", None)
    if path is None:
        cfg = RunConfig()
    else:
        try:
            cfg = RunConfig.from_file(path)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except InvalidInputError as exc:
            raise UsageError(f"{path}: {exc}") from None
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    out = getattr(args, "out", None) or os.environ.get(OUT_ENV) or cfg.out_dir
    overrides["out_dir"] = str(out)
    if getattr(args, "no_plots", False):
        overrides["plots"] = False
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    run = None
    try:
        cfg = resolve_config(args)
        run = _Run(args.command, cfg, Path(cfg.out_dir), argv)
        code = fn(run, args)
    except UsageError as exc:
        print(f"cloudrain {args.command}: {exc}", file=sys.stderr)
        return 2
    except CloudRainError as exc:
        print(f"cloudrain {args.command}: {exc}", file=sys.stderr)
        if run is not None:
            run.finish("failed")
        return 1
    run.finish("ok" if code == 0 else "failed")
    return code


if __name__ == "__main__":
    sys.exit(main())
