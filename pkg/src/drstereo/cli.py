"""Command-line entry point: ``drstereo <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
files, invalid values, failed checks).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import gradsuite
from .evaluation import BUCKET_EDGES, bucket_fractions, compute_metrics, corrupt_sim
from .rectifier import ModelConfig, init_params, run_iterations
from .stereoio import (FormatError, ImagePair, load_checkpoint, read_disparity, read_json,
                       read_pfm, read_pgm, save_checkpoint, to_luminance, write_json, write_pfm,
                       write_pgm)
from .synthtrain import SceneSpec, TrainConfig, gen_scene, train

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _add_model_flags(p):
    p.add_argument("--config", help="JSON training or model config")
    p.add_argument("--iters", type=int, help="number of update iterations")
    p.add_argument("--udc", type=_on_off, help="on|off")
    p.add_argument("--udr", type=_on_off, help="on|off")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drstereo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write synthetic PGM pairs and PFM ground truth")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--dmax", type=float, default=12.0)

    p = sub.add_parser("train", help="train on synthetic scenes")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--weight-form", choices=("exp", "sigmoid"))
    p.add_argument("--checkpoint", help="initial parameters")
    _add_model_flags(p)

    p = sub.add_parser("infer", help="predict disparity and uncertainty for a PGM pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--out", required=True)
    _add_model_flags(p)

    p = sub.add_parser("eval", help="metrics report for a predicted disparity")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--uncertainty")
    p.add_argument("--trace", help="trace.json from infer, for update buckets")
    p.add_argument("--auc-threshold", type=float, default=3.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("stats", help="update/error bucket tables")
    p.add_argument("--trace", required=True)
    p.add_argument("--gt")
    p.add_argument("--out", required=True)

    p = sub.add_parser("corrupt-sim", help="corrupt the initial disparity, compare UDC on/off")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--left")
    p.add_argument("--right")
    p.add_argument("--gt")
    p.add_argument("--region", type=int, nargs=4, metavar=("Y0", "X0", "Y1", "X1"), required=True)
    p.add_argument("--value", type=float, required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--out", required=True)
    _add_model_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--coords", type=int, default=8)
    p.add_argument("--out")
    return parser


def _load_json(path):
    try:
        return read_json(path)
    except FileNotFoundError:
        raise DataError(f"missing file {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _model_config(args) -> ModelConfig:
    cfg = ModelConfig()
    if getattr(args, "config", None):
        raw = _load_json(args.config)
        if "model" in raw:
            cfg = ModelConfig.from_dict(raw["model"])
        elif set(raw) <= set(ModelConfig.__dataclass_fields__):
            cfg = ModelConfig.from_dict(raw)
    overrides = {}
    if getattr(args, "iters", None) is not None:
        overrides["total_itr"] = args.iters
    if getattr(args, "udc", None) is not None:
        overrides["udc"] = args.udc
    if getattr(args, "udr", None) is not None:
        overrides["udr"] = args.udr
    return cfg.with_(**overrides)


def _read_image(path) -> np.ndarray:
    if str(path).lower().endswith(".pfm"):
        return to_luminance(read_pfm(path))
    return read_pgm(path)


def _check_params(params, cfg: ModelConfig):
    expected = init_params(cfg, 0)
    for name, node in expected.items():
        if name not in params:
            raise DataError(f"checkpoint lacks parameter {name!r} required by the model config")
        if params[name].shape != node.shape:
            raise DataError(f"checkpoint parameter {name!r} has shape {params[name].shape}, "
                            f"config expects {node.shape}")


def cmd_gen_data(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        spec = SceneSpec(args.seed + i, args.width, args.height, args.layers, args.dmax)
        pair, disp = gen_scene(spec)
        write_pgm(out / f"left_{i:04d}.pgm", pair.left)
        write_pgm(out / f"right_{i:04d}.pgm", pair.right)
        write_pfm(out / f"disp_{i:04d}.pfm", disp.to_array())
    print(f"wrote {args.count} scene(s) to {out}")


def cmd_train(args):
    cfg_dict = _load_json(args.config) if args.config else {}
    cfg_dict["seed"] = args.seed
    if args.steps is not None:
        cfg_dict["steps"] = args.steps
    model = _model_config(args)
    cfg_dict["model"] = model.to_dict()
    if args.weight_form:
        cfg_dict.setdefault("loss", {})["weight_form"] = args.weight_form
    cfg = TrainConfig.from_dict(cfg_dict)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    params = None
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint, cfg.seed)
        _check_params(params, cfg.model)
    with open(out / "metrics.jsonl", "w") as stream:
        params, records = train(cfg, params, stream, checkpoint_dir=out)
    save_checkpoint(params, out / "final.drsk")
    last = records[-1]
    print(f"trained {cfg.steps} steps; final loss {last['l_total']:.4f}"
          + (f", held-out EPE {last['heldout_epe']:.4f}" if "heldout_epe" in last else ""))


def cmd_infer(args):
    cfg = _model_config(args)
    params = load_checkpoint(args.checkpoint)
    _check_params(params, cfg)
    pair = ImagePair(_read_image(args.left), _read_image(args.right))
    trace = run_iterations(pair, params, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pfm(out / "disparity.pfm", trace.final.value)
    u = trace.u_final if trace.u_final is not None else _uncertainty_at(trace, params, cfg)
    write_pfm(out / "uncertainty.pfm", u.value)
    write_pfm(out / "d0.pfm", trace.d0.value)
    write_pfm(out / "d_udr.pfm", trace.d_udr.value)
    steps = []
    for k, step in enumerate(trace.steps):
        name = f"delta_{k:02d}.pfm"
        write_pfm(out / name, step.delta.value)
        a = np.abs(step.delta.value.astype(np.float64))
        steps.append({"delta": name, "mean_abs": float(a.mean()), "max_abs": float(a.max())})
    write_json(out / "trace.json", {
        "model": cfg.to_dict(),
        "d0": "d0.pfm",
        "d_udr": "d_udr.pfm",
        "final": "disparity.pfm",
        "udr_max_abs": float(np.abs(trace.d_udr.value - trace.d0.value).max()),
        "steps": steps,
    })
    print(f"wrote disparity, uncertainty and {len(steps)} update map(s) to {out}")


def _uncertainty_at(trace, params, cfg):
    from .costvol import lookup
    from .uec import estimate_uncertainty
    return estimate_uncertainty(lookup(trace.volume, trace.final, cfg.lookup), params)


def _trace_updates(trace_path) -> list:
    trace = _load_json(trace_path)
    root = Path(trace_path).parent
    updates = []
    for step in trace.get("steps", []):
        if "updates" in step:
            updates.append(np.asarray(step["updates"], dtype=np.float64).ravel())
        elif "delta" in step:
            updates.append(read_pfm(root / step["delta"]).astype(np.float64).ravel())
        else:
            raise DataError(f"{trace_path}: step without 'updates' or 'delta'")
    return updates


def cmd_eval(args):
    pred = read_pfm(args.pred)
    gt = read_disparity(args.gt)
    u = read_pfm(args.uncertainty) if args.uncertainty else None
    deltas = _trace_updates(args.trace) if args.trace else None
    report = compute_metrics(pred, gt.to_array(), u, gt.valid, deltas=deltas,
                             auc_err_thr=args.auc_threshold)
    write_json(args.out, report.to_dict())
    print(f"EPE {report.epe:.4f}  >1px {report.bad1:.4f}  >2px {report.bad2:.4f}  >3px {report.bad3:.4f}")


def cmd_stats(args):
    updates = _trace_updates(args.trace)
    if not updates:
        raise DataError(f"{args.trace}: trace has no steps")
    out = {"bucket_edges_px": list(BUCKET_EDGES),
           "updates": bucket_fractions(np.concatenate(updates))}
    if args.gt:
        trace = _load_json(args.trace)
        if "d0" not in trace or "d_udr" not in trace:
            raise DataError(f"{args.trace}: error buckets need the d0 and d_udr maps")
        root = Path(args.trace).parent
        gt = read_disparity(args.gt)
        d = read_pfm(root / trace["d_udr"]).astype(np.float64)
        maps = [read_pfm(root / trace["d0"]).astype(np.float64), d]
        for upd in updates:
            d = d + upd.reshape(d.shape)
            maps.append(d)
        out["errors"] = bucket_fractions(np.concatenate([np.abs(x - gt.values)[gt.valid] for x in maps]))
    write_json(args.out, out)
    print(" ".join(f"{k}: {v:.4f}" for k, v in out["updates"].items()))


def cmd_corrupt_sim(args):
    cfg = _model_config(args)
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint, args.seed)
        _check_params(params, cfg)
    else:
        params = init_params(cfg, args.seed)
    if args.left or args.right or args.gt:
        if not (args.left and args.right and args.gt):
            raise UsageError("corrupt-sim: --left, --right and --gt go together")
        pair = ImagePair(_read_image(args.left), _read_image(args.right))
        gt = read_disparity(args.gt)
    else:
        pair, gt = gen_scene(SceneSpec(args.seed, args.width, args.height,
                                       d_max=min(12.0, cfg.max_disp - 1.0)))
    result = corrupt_sim(pair, params, cfg, args.region, args.value, gt.values, gt.valid)
    write_json(args.out, result)
    for label in ("udc_on", "udc_off"):
        print(label, " ".join(f"{e:.3f}" for e in result[label]["epe"]))


def cmd_gradcheck(args):
    result = gradsuite.run_suite(args.seed, args.instances, args.coords, log=print)
    if args.out:
        write_json(args.out, result)
    print("PASS" if result["pass"] else "FAIL")
    return EXIT_OK if result["pass"] else EXIT_DATA


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "corrupt-sim": cmd_corrupt_sim,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("drstereo: a subcommand is required")
        code = COMMANDS[args.command](args)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
