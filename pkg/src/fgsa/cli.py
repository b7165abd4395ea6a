"""``fgsa`` command line: gen-data, train, eval, gradcheck, dump, sweep.

Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import data as D
from .config import RunConfig, load_config
from .metrics import aggregate
from .train import (backbone_digest, build_model, evaluate, load_run,
                    load_samples, save_run, train)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
REPORT_FIELDS = ("s_alpha", "e_phi", "f_w_beta", "mae")


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are validation failures, not runtime ones
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


# -- gen-data --------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    synth = cfg.data.synth
    kw = {}
    if args.n is not None:
        kw["n_train"] = args.n
    if args.n_test is not None:
        kw["n_test"] = args.n_test
    elif args.n is not None:
        kw["n_test"] = max(1, args.n // 2)
    for key, attr in (("size", "size"), ("seed", "seed"), ("contrast", "contrast_delta")):
        if getattr(args, key) is not None:
            kw[attr] = getattr(args, key)
    synth = replace(synth, **kw)
    synth.validate()
    out = Path(args.out or cfg.data.root or "data")
    for split in ("train", "test"):
        samples = D.generate(synth, split)
        for s in samples:
            D.save_sample(s, out / split)
        print(f"{split}: {len(samples)} samples -> {out / split}")
    return EXIT_OK


# -- train -----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    kw = {k: getattr(args, k) for k in ("epochs", "max_steps", "seed", "lr") if getattr(args, k) is not None}
    if kw:
        cfg = cfg.with_values("train", **kw)
    out = Path(args.out or cfg.out_dir)
    samples = load_samples(cfg, "train")
    val = load_samples(cfg, "test") if args.val else None
    model = build_model(cfg)

    ps = model.param_set()
    n_train, n_frozen = ps.count(trainable=True), ps.count(trainable=False)
    print(f"trainable parameters: {n_train} / {n_train + n_frozen} "
          f"({100 * n_train / (n_train + n_frozen):.2f}% of total, "
          f"{100 * n_train / n_frozen:.2f}% of the frozen backbone)")
    before = backbone_digest(model)
    print(f"backbone sha256 before: {before}")

    out.mkdir(parents=True, exist_ok=True)
    rows = []

    def on_epoch(epoch, res):
        row = {"epoch": epoch + 1, "steps": res.steps, "loss": res.epoch_losses[-1]}
        if val is not None:
            row["val_mae"] = evaluate(model, val)[0].mae
        rows.append(row)
        print("epoch {epoch:3d}  steps {steps:5d}  loss {loss:.6f}".format(**row)
              + (f"  val_mae {row['val_mae']:.4f}" if "val_mae" in row else ""))

    res = train(model, samples, cfg.train, on_epoch)
    after = backbone_digest(model)
    print(f"backbone sha256 after:  {after}")
    if after != before:
        raise RuntimeError("frozen backbone changed during training")

    with open(out / "train_log.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["epoch", "steps", "loss"])
        w.writeheader()
        w.writerows(rows)
    with open(out / "step_losses.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        w.writerows((i + 1, repr(v)) for i, v in enumerate(res.step_losses))
    info = save_run(model, out)
    _write_json(out / "summary.json", {
        "steps": res.steps, "initial_loss": res.step_losses[0] if res.step_losses else None,
        "final_loss": res.step_losses[-1] if res.step_losses else None,
        "trainable_params": n_train, "frozen_params": n_frozen,
        "tunable_fraction_total": n_train / (n_train + n_frozen),
        "tunable_fraction_backbone": n_train / n_frozen,
        "backbone_sha256_before": before, "backbone_sha256_after": after, **info})
    print(f"checkpoints written to {out}")
    return EXIT_OK


# -- eval ------------------------------------------------------------------

def _eval_dirs(pred_dir: Path, gt_dir: Path) -> dict:
    preds = D.png_stems(pred_dir)
    gts = D.png_stems(gt_dir)
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise ValidationError(f"no prediction for ground truth {missing[0]!r}")
    extra = sorted(set(preds) - set(gts))
    if extra:
        raise ValidationError(f"no ground truth for prediction {extra[0]!r}")
    pairs = []
    for stem in sorted(gts):
        p, g = D.read_gray(preds[stem]), D.read_mask(gts[stem])
        if p.shape != g.shape:
            raise ValidationError(f"{stem}: prediction {p.shape} vs ground truth {g.shape}")
        pairs.append((p, g))
    return aggregate(pairs).to_dict()


def cmd_eval(args) -> int:
    if args.pred or args.gt:
        if not args.gt or not (args.pred or args.oracle):
            raise ValidationError("--pred and --gt must be given together")
        gt_dir = Path(args.gt)
        pred_dir = gt_dir if args.oracle else Path(args.pred)
        report = _eval_dirs(pred_dir, gt_dir)
    else:
        cfg = _config(args)
        samples = load_samples(cfg, args.split)
        run_dir = Path(args.run or cfg.out_dir)
        if args.oracle:
            preds = [s.mask for s in samples]
            report = aggregate((s.mask, s.mask) for s in samples).to_dict()
        else:
            model = build_model(cfg) if args.untrained else load_run(cfg, run_dir, args.checkpoint)
            rep, preds = evaluate(model, samples)
            report = rep.to_dict()
        mask_dir = Path(args.masks) if args.masks else run_dir / f"pred_{args.split}"
        for s, p in zip(samples, preds):
            D.save_png(mask_dir / f"{s.id}.png", p)
        if args.report is None:
            args.report = run_dir / f"report_{args.split}.json"
    if args.report:
        _write_json(args.report, report)
    print(json.dumps(report))
    return EXIT_OK


# -- gradcheck -------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from .suite import CHECKS, format_table, run_suite
    if args.config:
        _config(args)  # accepted for uniformity; the suite has fixed shapes
    names = args.only or None
    if names:
        unknown = sorted(set(names) - set(CHECKS))
        if unknown:
            raise ValidationError(f"unknown check {unknown[0]!r}")
    results = run_suite(seeds=range(args.seeds), names=names)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_INVALID
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# -- dump ------------------------------------------------------------------

def cmd_dump(args) -> int:
    from .viz import dump_maps
    cfg = _config(args)
    samples = load_samples(cfg, args.split)
    if args.sample is not None:
        by_id = {s.id: s for s in samples}
        if args.sample not in by_id:
            raise ValidationError(f"no sample {args.sample!r} in split {args.split}")
        sample = by_id[args.sample]
    else:
        if not 0 <= args.index < len(samples):
            raise ValidationError(f"index {args.index} outside split of {len(samples)}")
        sample = samples[args.index]
    run_dir = Path(args.run or cfg.out_dir)
    model = build_model(cfg) if args.untrained else load_run(cfg, run_dir, args.checkpoint)
    out = Path(args.out or run_dir / "dump" / sample.id)
    paths = dump_maps(model, sample.image, out)
    print(f"{len(paths)} maps for {sample.id} -> {out}")
    return EXIT_OK


# -- sweep -----------------------------------------------------------------

def sweep_config(cfg: RunConfig, param: str, value: int) -> RunConfig:
    bb = cfg.backbone
    if param == "d":
        if value < 1:
            raise ValidationError(f"ring width d must be >= 1, got {value}")
        return cfg.with_values("adapter", d=value)
    if value < 1 or bb.depth % value:
        raise ValidationError(f"{param}={value} does not divide the backbone depth {bb.depth}")
    if param == "K":
        return cfg.with_values("backbone", layers_per_group=value, group_count=bb.depth // value)
    if param == "M_groups":
        return cfg.with_values("backbone", group_count=value, layers_per_group=bb.depth // value)
    raise ValidationError(f"unknown sweep parameter {param!r}")


def run_sweep(cfg: RunConfig, param: str, values) -> list[dict]:
    configs = [sweep_config(cfg, param, v) for v in values]  # validate before any training
    rows = []
    for v, c in zip(values, configs):
        model = build_model(c)
        train(model, load_samples(c, "train"), c.train)
        rep, _ = evaluate(model, load_samples(c, "test"))
        rows.append({"param_value": v, **{k: getattr(rep, k) for k in REPORT_FIELDS}})
    return rows


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if args.max_steps is not None:
        cfg = cfg.with_values("train", max_steps=args.max_steps)
    rows = run_sweep(cfg, args.param, args.values)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["param_value", *REPORT_FIELDS])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    for r in rows:
        print(f"{args.param}={r['param_value']}: " + "  ".join(f"{k} {r[k]:.4f}" for k in REPORT_FIELDS))
    print(f"wrote {out}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fgsa", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="run configuration file (INI)")
        sp.set_defaults(fn=fn)
        return sp

    g = add("gen-data", cmd_gen_data, "write a synthetic camouflage dataset")
    g.add_argument("--out")
    g.add_argument("--n", type=int, help="training samples (test split gets n // 2)")
    g.add_argument("--n-test", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--contrast", type=float)

    t = add("train", cmd_train, "train adapter and head on a frozen backbone")
    t.add_argument("--out")
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--val", action="store_true", help="report test MAE after every epoch")

    e = add("eval", cmd_eval, "score predictions or a trained run")
    e.add_argument("--pred", help="directory of predicted mask PNGs")
    e.add_argument("--gt", help="directory of ground-truth mask PNGs")
    e.add_argument("--report", help="output JSON path")
    e.add_argument("--run", help="training output directory (default: [out] dir)")
    e.add_argument("--checkpoint", help="adapter checkpoint path")
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--masks", help="where to write predicted masks")
    e.add_argument("--oracle", action="store_true", help="score ground truth against itself")
    e.add_argument("--untrained", action="store_true", help="evaluate the freshly initialized model")

    c = add("gradcheck", cmd_gradcheck, "finite-difference gradient checks")
    c.add_argument("--seeds", type=int, default=10)
    c.add_argument("--only", nargs="*")

    d = add("dump", cmd_dump, "write attention, prediction and energy maps as PNGs")
    d.add_argument("--run")
    d.add_argument("--checkpoint")
    d.add_argument("--split", default="test", choices=("train", "test"))
    d.add_argument("--sample", help="sample id")
    d.add_argument("--index", type=int, default=0)
    d.add_argument("--out")
    d.add_argument("--untrained", action="store_true")

    s = add("sweep", cmd_sweep, "ablate d, K or M_groups")
    s.add_argument("--param", required=True, choices=("d", "K", "M_groups"))
    s.add_argument("--values", required=True, type=int, nargs="+")
    s.add_argument("--out", required=True, help="CSV path")
    s.add_argument("--max-steps", type=int)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:  # includes config and checkpoint errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - map anything else to the runtime code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
