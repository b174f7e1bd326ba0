"""Command-line entry point: synth, train-transnet, ablate, eval, analyze-scales, export-mesh, gradcheck.

Exit codes: 0 ok, 2 configuration error, 3 I/O or parse error, 4 training
divergence, 5 gradient-check failure.
"""
from __future__ import annotations

import os

# single-threaded BLAS keeps float reductions in a fixed order across reruns
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import configparser
import csv
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4, 5

RUN_KEYS = ("seed", "train", "heldout", "epochs", "out", "eval_domain")


class CLIError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# configuration


def _parse_like(default, text: str, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(p) for p in text.replace(" ", "").split(",") if p)
    except ValueError:
        raise CLIError(EXIT_CONFIG, f"bad value for {key}: {text!r}") from None
    return text


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def transnet_config_from(values: dict):
    from .transnet import TransNetConfig
    base = TransNetConfig()
    known = {f.name for f in fields(TransNetConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise CLIError(EXIT_CONFIG, f"unknown transnet settings: {unknown}")
    kw = {k: _parse_like(getattr(base, k), v, k) if isinstance(v, str) else v for k, v in values.items()}
    return replace(base, **kw)


@dataclass
class RunConfig:
    seed: int
    train: str
    heldout: str
    epochs: int = 10
    out: str = "run"
    eval_domain: str = ""
    transnet: object = None
    grid: dict = field(default_factory=dict)

    def to_ini(self) -> str:
        lines = ["[run]"]
        for k in RUN_KEYS:
            lines.append(f"{k} = {getattr(self, k)}")
        lines += ["", "[transnet]"]
        for k, v in self.transnet.to_dict().items():
            lines.append(f"{k} = {_format_value(v)}")
        if self.grid:
            lines += ["", "[grid]"]
            for k, vs in self.grid.items():
                lines.append(f"{k} = {', '.join(_format_value(v) for v in vs)}")
        return "\n".join(lines) + "\n"


def _read_ini(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as e:
        raise CLIError(EXIT_IO, f"cannot read config {path}: {e}") from None
    except configparser.Error as e:
        raise CLIError(EXIT_CONFIG, f"malformed config {path}: {e}") from None
    return cp


def _split_sets(pairs):
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise CLIError(EXIT_CONFIG, f"--set expects KEY=VALUE, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_run_config(args, with_grid=False) -> RunConfig:
    """Config file values, overridden by explicit flags; validates paths up front."""
    cp = _read_ini(args.config if not with_grid else args.grid)
    run = dict(cp["run"]) if cp.has_section("run") else {}
    unknown = sorted(set(run) - set(RUN_KEYS))
    if unknown:
        raise CLIError(EXIT_CONFIG, f"unknown run settings: {unknown}")
    for k in RUN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            run[k] = str(v)
    if "seed" not in run or not str(run["seed"]).strip():
        raise CLIError(EXIT_CONFIG, "a seed is required (config [run] seed or --seed)")
    for k in ("train", "heldout"):
        if not run.get(k):
            raise CLIError(EXIT_CONFIG, f"[run] {k} dataset path is required")
        if not os.path.isfile(run[k]):
            raise CLIError(EXIT_IO, f"dataset not found: {run[k]}")
    tn = dict(cp["transnet"]) if cp.has_section("transnet") else {}
    tn.update(_split_sets(getattr(args, "set", None)))
    try:
        cfg = transnet_config_from(tn)
        seed, epochs = int(run["seed"]), int(run.get("epochs", 10))
    except ValueError as e:
        raise CLIError(EXIT_CONFIG, str(e)) from None
    grid = {}
    if with_grid:
        if not cp.has_section("grid"):
            raise CLIError(EXIT_CONFIG, "grid file needs a [grid] section")
        for k, text in cp["grid"].items():
            if k not in ("input_repr", "head", "weak_supervision"):
                raise CLIError(EXIT_CONFIG, f"grid axis {k!r} not supported")
            grid[k] = [_parse_like(getattr(cfg, k), p, k) for p in text.split(",") if p.strip()]
    return RunConfig(seed=seed, train=run["train"], heldout=run["heldout"], epochs=epochs,
                     out=run.get("out", "run"), eval_domain=run.get("eval_domain", ""),
                     transnet=cfg, grid=grid)


# ---------------------------------------------------------------------------
# commands


def _load(path):
    from .synth import read_dataset
    return read_dataset(path)


def cmd_synth(args):
    from .synth import SynthConfig, generate, write_dataset
    if args.count < 0:
        raise CLIError(EXIT_CONFIG, "--count must be >= 0")
    if not 0.0 <= args.itw_fraction <= 1.0:
        raise CLIError(EXIT_CONFIG, "--itw-fraction must lie in [0, 1]")
    cfg = SynthConfig(itw_fraction=args.itw_fraction, itw_domain=args.itw_domain)
    scenes = generate(args.seed, args.count, cfg)
    write_dataset(scenes, args.out)
    frac = float(np.mean([s.interacting for s in scenes])) if scenes else 0.0
    n_itw = sum(s.is_itw for s in scenes)
    print(f"scenes {len(scenes)}")
    print(f"itw {n_itw}")
    print(f"interacting_fraction {frac:.6f}")
    return EXIT_OK


def _train_one(rc: RunConfig, out_dir, log=True):
    from .autodiff import save_checkpoint
    from .metrics import write_metric_csv
    from .transnet import train, write_history_csv
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.ini"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rc.to_ini())
    tr, he = _load(rc.train), _load(rc.heldout)

    def show(row):
        if log:
            print(f"epoch {row['epoch']} {row['split']} mrrpe_mm {row['mrrpe_mm']:.6f} loss {row['loss']:.9g}",
                  flush=True)
    res = train(rc.transnet, tr, he, epochs=rc.epochs, seed=rc.seed,
                eval_domain=rc.eval_domain or None, log=show)
    write_history_csv(res.history, os.path.join(out_dir, "history.csv"))
    meta = {"transnet": rc.transnet.to_dict(), "seed": rc.seed, "epochs": rc.epochs}
    save_checkpoint(os.path.join(out_dir, "checkpoint.iwck"), res.model.parameters(), meta)
    final = res.final()
    write_metric_csv([("transnet", "heldout", "mrrpe", final)], os.path.join(out_dir, "metrics.csv"))
    return final


def cmd_train(args):
    rc = resolve_run_config(args)
    print(rc.to_ini(), end="")
    final = _train_one(rc, rc.out)
    print(f"final heldout mrrpe_mm {final:.6f}")
    return EXIT_OK


def _cell_name(cell):
    return ",".join(f"{k}={_format_value(v)}" for k, v in cell.items())


def _run_cell(rc, cell):
    sub = replace(rc, transnet=replace(rc.transnet, **cell), grid={})
    return _train_one(sub, os.path.join(rc.out, _cell_name(cell).replace(",", "__")), log=False)


def cmd_ablate(args):
    rc = resolve_run_config(args, with_grid=True)
    axes = list(rc.grid)
    cells = [dict(zip(axes, combo)) for combo in itertools.product(*rc.grid.values())]
    os.makedirs(rc.out, exist_ok=True)
    with open(os.path.join(rc.out, "grid.ini"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(rc.to_ini())
    # validate every cell before spending compute on any of them
    for cell in cells:
        replace(rc.transnet, **cell)
    workers = max(1, int(os.environ.get("IW_THREADS", "1")))
    if workers == 1 or len(cells) == 1:
        finals = [_run_cell(rc, c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            finals = list(ex.map(_run_cell, [rc] * len(cells), cells))
    path = os.path.join(rc.out, "comparison.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "input_repr", "head", "weak_supervision", "split", "mrrpe_mm"])
        for cell, v in zip(cells, finals):
            c = replace(rc.transnet, **cell)
            w.writerow([_cell_name(cell), c.input_repr, c.head, _format_value(c.weak_supervision),
                        "heldout", f"{v:.6f}"])
    print(f"{'input':<14}{'head':<12}{'weak':<8}{'MRRPE (mm)':>12}")
    for cell, v in zip(cells, finals):
        c = replace(rc.transnet, **cell)
        print(f"{c.input_repr:<14}{c.head:<12}{_format_value(c.weak_supervision):<8}{v:>12.3f}")
    return EXIT_OK


def _load_transnet(path):
    from .autodiff import assign_parameters, load_checkpoint
    from .transnet import TransNet, TransNetConfig
    try:
        arrays, meta = load_checkpoint(path)
    except OSError as e:
        raise CLIError(EXIT_IO, f"cannot read checkpoint {path}: {e}") from None
    except ValueError as e:
        raise CLIError(EXIT_IO, str(e)) from None
    cfg = TransNetConfig.from_dict(meta["transnet"])
    model = TransNet(cfg, np.random.default_rng(0))
    assign_parameters(model.parameters(), arrays)
    return model, cfg


def cmd_eval(args):
    from .hand_model import HandParams, hand_forward
    from .metrics import mpjpe, mpvpe, rel_trans_errors, write_metric_csv
    from .transnet import predict, prepare_sample
    scenes = _load(args.dataset)
    if args.checkpoint is None and args.predictions is None:
        raise CLIError(EXIT_CONFIG, "eval needs --checkpoint and/or --predictions")
    t_pred = None
    preds = None
    if args.predictions is not None:
        preds = _load(args.predictions)
        if [p.index for p in preds] != [s.index for s in scenes]:
            raise CLIError(EXIT_CONFIG, "predictions do not line up with the dataset scenes")
        t_pred = np.array([p.t_gt for p in preds]).reshape(-1, 3)
    if args.checkpoint is not None:
        model, cfg = _load_transnet(args.checkpoint)
        samples = [prepare_sample(s, cfg) for s in scenes]
        t_pred = predict(model, samples, cfg, args.domain)
    splits = ["all"] + sorted({s.domain for s in scenes})
    rows = []
    t_gt = np.array([s.t_gt for s in scenes]).reshape(-1, 3)
    for split in splits:
        idx = [i for i, s in enumerate(scenes) if split == "all" or s.domain == split]
        if not idx:
            continue
        rows.append(("eval", split, "mrrpe", float(np.mean(rel_trans_errors(t_pred[idx], t_gt[idx])))))
        if preds is not None:
            pj, gj, pv, gv = [], [], [], []
            for i in idx:
                for hand in ("r", "l"):
                    p = getattr(preds[i], f"params_{hand}")
                    g = getattr(scenes[i], f"params_{hand}")
                    mp, mg = hand_forward(HandParams(p.theta, p.beta, p.handedness)), hand_forward(g)
                    pj.append(mp.joints), gj.append(mg.joints), pv.append(mp.vertices), gv.append(mg.vertices)
            rows.append(("eval", split, "mpjpe", mpjpe(np.array(pj), np.array(gj))))
            rows.append(("eval", split, "mpvpe", mpvpe(np.array(pv), np.array(gv))))
    for _, split, metric, v in rows:
        print(f"{split} {metric}_mm {v:.6f}")
    if args.out:
        write_metric_csv(rows, args.out)
    return EXIT_OK


def cmd_scales(args):
    from .metrics import scale_histogram, scale_stats
    scenes = _load(args.dataset)
    subsets = [("all", scenes), ("interacting", [s for s in scenes if s.interacting])]
    print(f"{'subset':<13}{'input':<16}{'n_hands':>8}{'mean_w':>10}{'mean_h':>10}")
    for name, sub in subsets:
        for mode in ("single_crop", "two_hand_union"):
            w, h = scale_stats(sub, mode)
            print(f"{name:<13}{mode:<16}{2 * len(sub):>8}{w:>10.4f}{h:>10.4f}")
    inter = subsets[1][1]
    if inter:
        print("histogram of normalized width (interacting), bins of 0.1 over [0, 1]:")
        for mode in ("single_crop", "two_hand_union"):
            counts, _ = scale_histogram(inter, mode)
            print(f"{mode:<16}" + " ".join(f"{c:>5d}" for c in counts))
    return EXIT_OK


def cmd_export(args):
    from .hand_model import N_BONES, N_SHAPE, HandParams, export_obj, hand_forward
    try:
        with open(args.params, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as e:
        raise CLIError(EXIT_IO, f"cannot read {args.params}: {e}") from None
    except json.JSONDecodeError as e:
        raise CLIError(EXIT_IO, f"{args.params}: invalid JSON: {e}") from None
    try:
        theta = np.asarray(d.get("theta", np.zeros((N_BONES, 3))), dtype=np.float64).reshape(N_BONES, 3)
        beta = np.asarray(d.get("beta", np.zeros(N_SHAPE)), dtype=np.float64).reshape(N_SHAPE)
        params = HandParams(theta, beta, d.get("handedness", "right"))
    except (ValueError, TypeError) as e:
        raise CLIError(EXIT_CONFIG, f"bad hand parameters: {e}") from None
    export_obj(hand_forward(params), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradsuite import run_suite

    def show(r):
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name:<26} cases {r.cases} worst_rel_err {r.worst:.3e}", flush=True)
    results = run_suite(cases=args.cases, seed=args.seed, log=show)
    bad = [r.name for r in results if not r.ok]
    if bad:
        print(f"gradcheck failed: {', '.join(bad)}")
        return EXIT_GRADCHECK
    print("gradcheck ok")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="twohand", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic two-hand dataset")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--itw-fraction", type=float, default=0.0)
    s.add_argument("--itw-domain", default="itw_A", choices=["itw_A", "itw_B"])
    s.set_defaults(func=cmd_synth)

    def run_flags(q):
        q.add_argument("--seed", type=int)
        q.add_argument("--train")
        q.add_argument("--heldout")
        q.add_argument("--epochs", type=int)
        q.add_argument("--out")
        q.add_argument("--eval-domain", dest="eval_domain")
        q.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a [transnet] setting")

    t = sub.add_parser("train-transnet", help="train one TransNet configuration")
    t.add_argument("--config", required=True)
    run_flags(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train a grid of TransNet configurations")
    a.add_argument("--grid", required=True)
    run_flags(a)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="report MRRPE/MPJPE/MPVPE per split")
    e.add_argument("--dataset", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--predictions", help="dataset-format file whose params/t are taken as predictions")
    e.add_argument("--domain", help="render image inputs in this appearance domain")
    e.add_argument("--out", help="metric CSV path")
    e.set_defaults(func=cmd_eval)

    sc = sub.add_parser("analyze-scales", help="hand scale statistics per input-cropping policy")
    sc.add_argument("--dataset", required=True)
    sc.set_defaults(func=cmd_scales)

    x = sub.add_parser("export-mesh", help="write the mesh for JSON hand parameters as OBJ")
    x.add_argument("--params", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)

    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    g.add_argument("--cases", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    from .errors import ConfigError, InvalidConfig, ParseError, ShapeMismatch, TrainingDiverged
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (InvalidConfig, ConfigError, ShapeMismatch) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
