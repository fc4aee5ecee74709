"""Command line for the posekit toolkit.

Exit codes: 0 success, 2 bad arguments, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import augment, metrics, pipeline, simdata, vitpose
from .errors import DataError, IdMismatch, NumericalError
from .geometry import Pose, Quaternion, load_camera, load_model, speed_camera
from .roi import RoiBox

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

TOY_BACKBONE = vitpose.VitConfig(dim=64, depth=4, heads=4, head_channels=32)


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    p.add_argument("--camera", type=Path, default=d(None), help="camera JSON")
    p.add_argument("--model", type=Path, default=d(None), help="keypoint model JSON")
    p.add_argument("--out", type=Path, default=d(None), help="output path")
    p.add_argument("--workers", type=int, default=d(None),
                   help="worker processes (fallback: $POSEKIT_WORKERS, else 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posekit", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    _global_flags(g, suppress=True)
    g.add_argument("--regime", choices=("close", "far", "custom"), default="close")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--distance-min", type=float)
    g.add_argument("--distance-max", type=float)
    g.add_argument("--noise", type=float, default=0.0, help="keypoint noise sigma [px]")
    g.add_argument("--outlier-rate", type=float, default=0.0)
    g.add_argument("--outlier-magnitude", type=float, default=20.0)

    e = sub.add_parser("eval", help="run the crop/heatmap/EPnP pipeline on a dataset")
    _global_flags(e, suppress=True)
    e.add_argument("--dataset", type=Path, required=True)
    e.add_argument("--resolution", type=int, default=224, choices=pipeline.RESOLUTIONS)
    e.add_argument("--sigma", type=float, default=1.0, help="heatmap sigma [heatmap px]")
    e.add_argument("--ensemble", type=int, default=1)
    e.add_argument("--no-refine", action="store_true", help="skip Gauss-Newton pose polish")
    e.add_argument("--no-subpixel", action="store_true", help="plain argmax decoding")
    e.add_argument("--bypass-heatmap", action="store_true",
                   help="feed noisy keypoints straight to EPnP")
    e.add_argument("--hil-thresholds", action="store_true")
    e.add_argument("--predictions", type=Path, help="also write predicted poses (JSON lines)")

    s = sub.add_parser("score", help="score predicted poses against a dataset")
    _global_flags(s, suppress=True)
    s.add_argument("--predictions", type=Path, required=True)
    s.add_argument("--dataset", type=Path, required=True)
    s.add_argument("--hil-thresholds", action="store_true")
    s.add_argument("--theta-q", type=float, help="override rotation threshold [deg]")
    s.add_argument("--theta-t", type=float, help="override normalized translation threshold")

    b = sub.add_parser("bench", help="time forward/decode/EPnP on this machine")
    _global_flags(b, suppress=True)
    b.add_argument("--backbone", default="toy", choices=["toy", *vitpose.PRESETS])
    b.add_argument("--reps", type=int, default=30)
    b.add_argument("--warmup", type=int, default=5)

    a = sub.add_parser("augment", help="augment an 8-bit grayscale PNG")
    _global_flags(a, suppress=True)
    a.add_argument("--image", type=Path, required=True)
    a.add_argument("--sample-index", type=int, default=0)
    a.add_argument("--n-ops", type=int, default=5)
    a.add_argument("--flare-box", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"))
    return parser


def _camera_model(args, dataset=None):
    camera = load_camera(args.camera) if args.camera else (dataset.camera if dataset else None)
    model = load_model(args.model) if args.model else (dataset.model if dataset else None)
    return camera or speed_camera(), model or simdata.default_model()


def cmd_generate(args) -> int:
    if args.out is None:
        raise DataError("generate needs --out")
    rng = None
    if args.distance_min is not None or args.distance_max is not None:
        rng = (args.distance_min, args.distance_max)
    spec = simdata.ScenarioSpec(args.regime, rng, args.n, args.seed, args.noise,
                                args.outlier_rate, args.outlier_magnitude)
    camera, model = _camera_model(args)
    samples = simdata.generate(spec, camera, model, pipeline.resolve_workers(args.workers))
    simdata.write_dataset(samples, args.out, spec, camera, model)
    print(f"wrote {len(samples)} samples to {args.out}")
    if samples:
        d = [float(np.linalg.norm(s.pose.translation)) for s in samples]
        f = [s.roi_fraction for s in samples]
        print(f"distance [m]: {min(d):.2f} .. {max(d):.2f}")
        print(f"RoI side / image width: {100 * min(f):.2f}% .. {100 * max(f):.2f}%")
    return EXIT_OK


def _write_predictions(path, results) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps({"id": r.id, "q_target2cam": r.pose.rotation.as_array().tolist(),
                                 "t_cam": r.pose.translation.tolist()}) + "\n")


def cmd_eval(args) -> int:
    ds = simdata.load_dataset(args.dataset)
    camera, model = _camera_model(args, ds)
    cfg = pipeline.RunConfig(
        input_resolution=args.resolution, heatmap_sigma=args.sigma, ensemble_size=args.ensemble,
        refine=not args.no_refine, subpixel=not args.no_subpixel,
        bypass_heatmap=args.bypass_heatmap, seed=args.seed,
        thresholds=metrics.HIL_THRESHOLDS if args.hil_thresholds else metrics.NO_THRESHOLDS)
    results = pipeline.evaluate(ds, cfg, camera, model, args.workers)
    if not results:
        raise DataError("dataset is empty; nothing to evaluate")
    ids = [r.id for r in results]
    errs = [r.error for r in results]
    out = args.out or Path("report.csv")
    summary = metrics.write_report(out, ids, errs)
    if args.predictions:
        _write_predictions(args.predictions, results)
    print(f"{len(results)} samples: mean e_q {summary['e_q']['mean']:.4f} deg, "
          f"mean e_t {summary['e_t']['mean']:.4f} m, mean e_pose {summary['e_pose']['mean']:.5f}")
    print(f"report: {out}")
    return EXIT_OK


def read_predictions(path) -> dict:
    preds = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for ln in lines:
        if not ln.strip():
            continue
        try:
            d = json.loads(ln)
            preds[str(d["id"])] = Pose(Quaternion.from_array(d["q_target2cam"]), d["t_cam"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad prediction record: {exc}") from exc
    return preds


def score(preds: dict, samples, thresholds) -> tuple[list, list]:
    truth_ids = [s.id for s in samples]
    for sid in truth_ids:
        if sid not in preds:
            raise IdMismatch(f"no prediction for sample id {sid!r}")
    extra = sorted(set(preds) - set(truth_ids))
    if extra:
        raise IdMismatch(f"prediction id {extra[0]!r} not in the dataset")
    return truth_ids, [metrics.pose_error(preds[s.id], s.pose, thresholds) for s in samples]


def cmd_score(args) -> int:
    ds = simdata.load_dataset(args.dataset)
    th = metrics.HIL_THRESHOLDS if args.hil_thresholds else metrics.NO_THRESHOLDS
    th = metrics.Thresholds(args.theta_q if args.theta_q is not None else th.theta_q,
                            args.theta_t if args.theta_t is not None else th.theta_t)
    ids, errs = score(read_predictions(args.predictions), ds.samples, th)
    out = args.out or Path("score.csv")
    summary = metrics.write_report(out, ids, errs)
    print(f"{summary['count']} samples: mean e_pose* {summary['e_pose_star']['mean']:.5f}, "
          f"mean e_q* {summary['e_q_star']['mean']:.4f} deg")
    print(f"report: {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = TOY_BACKBONE if args.backbone == "toy" else vitpose.PRESETS[args.backbone]
    report = pipeline.benchmark(cfg, reps=args.reps, warmup=args.warmup, seed=args.seed)
    for name, st in report["stages"].items():
        print(f"{name:12s} median {1e3 * st['median_s']:9.3f} ms  ({st['reps']} reps)")
    print(f"forward 448/224 cost ratio: {report['forward_ratio_448_224']:.2f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_augment(args) -> int:
    if args.out is None:
        raise DataError("augment needs --out")
    try:
        img = augment.load_png(args.image)
    except OSError as exc:
        raise DataError(f"cannot read {args.image}: {exc}") from exc
    box = RoiBox(*args.flare_box) if args.flare_box else None
    n_ops = min(args.n_ops, len(augment.default_ops()))
    pipe = augment.AugmentPipeline(n_per_sample=n_ops, seed=args.seed)
    out = augment.apply(pipe, img, args.sample_index, box)
    augment.save_png(out, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "eval": cmd_eval, "score": cmd_score,
            "bench": cmd_bench, "augment": cmd_augment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"posekit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"posekit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
