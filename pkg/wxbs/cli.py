"""wxbs's CLI, which matches two images (or does a few related things).

There are four subcommands:

    wxbs detect image.png -o image.feat
    wxbs mods first.png second.png -o result
    wxbs eval pairs.json gt/ -o report.json
    wxbs losslab toy.json -o trajectory.txt

`detect` writes the features of one image.  `mods` matches two images,
writing `result.matches` and `result.model`.  Without `-o` both go to
standard output, the model first and then the correspondences after a
"# matches" line.  When no model could be estimated at all there is no
`result.model` (and no model block on standard output); the
correspondences are written regardless.

`eval` runs (or reads) estimates for a manifest of pairs and reports
verdicts, recall curves and mAA as JSON.  `losslab` runs a toy
descriptor-loss optimization and writes every iterate.

Data goes to the output file (or standard output), a one-line summary to
standard error.  The exit status is 0 on success, 2 when `mods` finds no
match, and 1 for everything else that goes wrong, including bad
command-line arguments.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import (
    Any,
    Dict,
    Iterator,
    List,
    NoReturn,
    Optional,
    Sequence,
    TextIO,
    Union,
)

import numpy as np

from wxbs.config import RunConfig, load_config, load_toy_spec
from wxbs.estimator import TwoViewModel
from wxbs.evalkit import (
    GtCorrespondenceSet,
    PairVerdict,
    maa,
    pair_verdicts,
    pose_error,
    pose_from_fundamental,
    summarize_recall,
)
from wxbs.exceptions import (
    CheiralityError,
    ConfigError,
    DegenerateConfiguration,
    InsufficientData,
    WxbsException,
)
from wxbs.formats import (
    load_image,
    read_gt_correspondences,
    read_matches,
    read_model,
    write_features,
    write_matches,
    write_model,
    write_trajectory,
)
from wxbs.losslab import toy_loss, toy_optimize
from wxbs.mods import ModsConfig, extract_features, run_mods

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_MATCH = 2
THREADS_ENV = "WXBS_THREADS"
MATCHES_HEADER = "# matches\n"
MODEL_FLAGS = {"h": "homography", "f": "fundamental", "auto": "auto"}
MANIFEST_KEYS = {
    "name",
    "category",
    "image1",
    "image2",
    "gt_model",
    "gt_kind",
    "gt_corr",
    "estimate",
    "matches",
    "pose",
}


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1, status 2 means "no match"."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def make_argparse() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("--seed", type=int, help="Random seed for RANSAC")
    common.add_argument(
        "--threads",
        type=int,
        help=f"Worker processes (default: ${THREADS_ENV}, or 1)",
    )
    common.add_argument(
        "-o", "--output", help="Output file (or prefix, for mods)", default=None
    )
    common.add_argument(
        "-v",
        "--verbosity",
        type=int,
        choices=(0, 1, 2),
        default=0,
        help="0: warnings, 1: progress, 2: debugging output",
    )
    matching = argparse.ArgumentParser(add_help=False)
    matching.add_argument(
        "--model", choices=sorted(MODEL_FLAGS), help="Two-view model to estimate"
    )
    matching.add_argument(
        "--min-inliers", type=int, help="Verified correspondences needed to stop"
    )
    matching.add_argument("--max-steps", type=int, help="Run at most this many steps")

    parser = ArgumentParser(
        prog="wxbs", description="Wide-baseline matching with view synthesis."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser(
        "detect", parents=[common], help="Write the features of an image"
    )
    p.add_argument("image", type=Path)
    p = sub.add_parser("mods", parents=[common, matching], help="Match two images")
    p.add_argument("image1", type=Path)
    p.add_argument("image2", type=Path)
    p = sub.add_parser(
        "eval", parents=[common, matching], help="Evaluate a manifest of pairs"
    )
    p.add_argument("manifest", type=Path)
    p.add_argument("gt_dir", type=Path)
    p = sub.add_parser("losslab", parents=[common], help="Run a toy loss optimization")
    p.add_argument("spec", type=Path)
    return parser


def resolve_threads(flag: Optional[int], cfg: RunConfig) -> int:
    """--threads, then the configuration, then $WXBS_THREADS, then 1."""
    if flag is not None:
        threads = flag
    elif cfg.threads is not None:
        threads = cfg.threads
    elif os.environ.get(THREADS_ENV):
        try:
            threads = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ConfigError(
                f"${THREADS_ENV} must be an integer, got {os.environ[THREADS_ENV]!r}"
            ) from None
    else:
        threads = 1
    if threads < 1:
        raise ConfigError(f"Thread count must be >= 1, got {threads}")
    return threads


def mods_config(cfg: RunConfig, args: argparse.Namespace) -> ModsConfig:
    """Matcher configuration with command-line overrides applied."""
    mods = cfg.mods_config()
    changes: Dict[str, Any] = {}
    if args.seed is not None:
        changes["ransac"] = dataclasses.replace(mods.ransac, seed=args.seed)
    if args.model is not None:
        changes["model"] = MODEL_FLAGS[args.model]
    if args.min_inliers is not None:
        changes["theta_m"] = args.min_inliers
    if args.max_steps is not None:
        changes["s_max"] = args.max_steps
    if not changes:
        return mods
    try:
        return dataclasses.replace(mods, **changes)
    except ValueError as e:
        raise ConfigError(str(e)) from e


@contextmanager
def _output(path: Union[str, Path, None]) -> Iterator[TextIO]:
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        with open(path, "wt", encoding="utf-8") as fp:
            yield fp


def cmd_detect(args: argparse.Namespace, cfg: RunConfig) -> int:
    img = load_image(args.image)
    step = cfg.detect
    feats = extract_features(
        img,
        step,
        cfg.mods.baumberg,
        max_workers=resolve_threads(args.threads, cfg),
    )
    with _output(args.output or cfg.output) as fp:
        write_features(fp, feats, step.descriptor)
    print(f"{args.image}: {len(feats)} features", file=sys.stderr)
    return EXIT_OK


def cmd_mods(args: argparse.Namespace, cfg: RunConfig) -> int:
    img1 = load_image(args.image1)
    img2 = load_image(args.image2)
    mods = mods_config(cfg, args)
    result = run_mods(img1, img2, mods, max_workers=resolve_threads(args.threads, cfg))
    prefix = args.output or cfg.output
    if prefix is None:
        if result.model is not None:
            write_model(sys.stdout, result.model)
        sys.stdout.write(MATCHES_HEADER)
        write_matches(
            sys.stdout,
            result.correspondences,
            result.features1.centers,
            result.features2.centers,
        )
    else:
        with open(f"{prefix}.matches", "wt", encoding="utf-8") as fp:
            write_matches(
                fp,
                result.correspondences,
                result.features1.centers,
                result.features2.centers,
            )
        if result.model is not None:
            with open(f"{prefix}.model", "wt", encoding="utf-8") as fp:
                write_model(fp, result.model)
    print(
        f"{'matched' if result.success else 'no match'}: "
        f"{result.num_inliers} correspondences after {result.steps_used} steps",
        file=sys.stderr,
    )
    return EXIT_OK if result.success else EXIT_NO_MATCH


def _resolve(base: Path, name: str) -> Path:
    path = Path(name)
    return path if path.is_absolute() else base / path


def read_manifest(path: Path) -> List[Dict[str, Any]]:
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    if not isinstance(entries, list):
        raise ConfigError(f"{path}: manifest must be a JSON list")
    if not entries:
        raise InsufficientData(f"{path}: manifest lists no pairs")
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise ConfigError(f"{path}: entry {i} is not an object")
        unknown = set(entry) - MANIFEST_KEYS
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"{path}: unknown key {key!r} in entry {i}")
        if not any(k in entry for k in ("gt_model", "gt_corr", "pose")):
            raise InsufficientData(f"{path}: entry {i} has no ground truth")
        if "estimate" not in entry and not ("image1" in entry and "image2" in entry):
            raise ConfigError(f"{path}: entry {i} needs images or an estimate")
    return entries


def _finite(x: Optional[float]) -> Optional[float]:
    return float(x) if x is not None and np.isfinite(x) else None


def _pair_pose_error(
    pose: Dict[str, Any], model: Optional[TwoViewModel], u: np.ndarray, v: np.ndarray
) -> float:
    if model is None or model.kind != "fundamental" or len(u) == 0:
        return float("inf")
    try:
        K1, K2, R, t = (np.array(pose[k], dtype=float) for k in ("K1", "K2", "R", "t"))
    except KeyError as e:
        raise ConfigError(f"pose needs K1, K2, R and t, missing {e}") from None
    try:
        R_est, t_est = pose_from_fundamental(model.M, K1, K2, u, v)
    except (CheiralityError, DegenerateConfiguration, InsufficientData) as e:
        log.warning("Pose recovery failed: %s", e)
        return float("inf")
    return pose_error(R_est, t_est, R, t)


def evaluate_pair(
    entry: Dict[str, Any], gt_dir: Path, cfg: RunConfig, mods: ModsConfig, threads: int
) -> Dict[str, Any]:
    name = entry.get("name", f"{entry.get('image1')}-{entry.get('image2')}")
    gt_model = None
    if "gt_model" in entry:
        with open(_resolve(gt_dir, entry["gt_model"]), encoding="utf-8") as fp:
            gt_model = read_model(fp, entry.get("gt_kind", "homography"))
    gt = None
    if "gt_corr" in entry:
        with open(_resolve(gt_dir, entry["gt_corr"]), encoding="utf-8") as fp:
            u, v = read_gt_correspondences(fp)
        gt = GtCorrespondenceSet(u, v, gt_model, entry.get("category", ""), name)
    if "estimate" in entry:
        with open(_resolve(gt_dir, entry["estimate"]), encoding="utf-8") as fp:
            model: Optional[TwoViewModel] = read_model(fp)
        pts1 = pts2 = np.zeros((0, 2))
        if "matches" in entry:
            with open(_resolve(gt_dir, entry["matches"]), encoding="utf-8") as fp:
                m = read_matches(fp)
            pts1, pts2 = m.u, m.v
    else:
        img1 = load_image(_resolve(gt_dir, entry["image1"]))
        img2 = load_image(_resolve(gt_dir, entry["image2"]))
        result = run_mods(img1, img2, mods, max_workers=threads)
        model = result.model
        pts1, pts2 = result.points()
    verdict: Optional[PairVerdict] = None
    if gt_model is not None:
        verdict = pair_verdicts(pts1, pts2, gt_model, cfg.eval.radius)
    pose_err = None
    if "pose" in entry:
        u, v = (gt.u, gt.v) if gt is not None else (pts1, pts2)
        pose_err = _pair_pose_error(entry["pose"], model, u, v)
    return {
        "name": name,
        "category": entry.get("category", ""),
        "gt": gt,
        "model": model,
        "correspondences": len(pts1),
        "verdict": verdict,
        "pose_error": pose_err,
    }


def _report(rows: Sequence[Dict[str, Any]], cfg: RunConfig) -> Dict[str, Any]:
    thetas = list(cfg.eval.thetas)
    with_gt = [r for r in rows if r["gt"] is not None]
    curves, by_cat = summarize_recall(
        [r["gt"] for r in with_gt], [r["model"] for r in with_gt], thetas
    )
    curve_of = {id(r): c for r, c in zip(with_gt, curves)}
    pairs = []
    for r in rows:
        verdict = r["verdict"]
        curve = curve_of.get(id(r))
        median = None if verdict is None else verdict.median_error
        pairs.append(
            {
                "name": r["name"],
                "category": r["category"],
                "model": None if r["model"] is None else r["model"].kind,
                "correspondences": r["correspondences"],
                "correct": None if verdict is None else verdict.correct,
                "solved": None if verdict is None else verdict.solved,
                "median_error": _finite(median),
                "median_ok": None if verdict is None else verdict.median_ok,
                "recall": None if curve is None else [float(x) for x in curve],
                "pose_error": _finite(r["pose_error"]),
            }
        )
    pose_errors = [r["pose_error"] for r in rows if r["pose_error"] is not None]
    return {
        "thetas": thetas,
        "pairs": pairs,
        "categories": {k: [float(x) for x in v] for k, v in by_cat.items()},
        "solved": sum(1 for p in pairs if p["solved"]),
        "maa": maa(pose_errors, cfg.eval.maa_max, cfg.eval.maa_step)
        if pose_errors
        else None,
    }


def _print_table(report: Dict[str, Any], radius: float, fp: TextIO) -> None:
    thetas = np.array(report["thetas"])
    col = int(np.argmin(np.abs(thetas - radius)))
    recall_at = f"recall@{thetas[col]:g}"
    fp.write(
        f"{'pair':24} {'category':12} {'model':12} {'corrs':>6} "
        f"{'correct':>7} {'solved':>6} {recall_at:>10}\n"
    )
    for p in report["pairs"]:
        recall = "-" if p["recall"] is None else f"{p['recall'][col]:.3f}"
        fp.write(
            f"{p['name'][:24]:24} {p['category'][:12]:12} {str(p['model']):12} "
            f"{p['correspondences']:>6} {str(p['correct']):>7} "
            f"{str(p['solved']):>6} {recall:>10}\n"
        )
    for cat, curve in report["categories"].items():
        fp.write(f"category {cat or '(none)'}: mean recall {curve[col]:.3f}\n")
    fp.write(f"solved {report['solved']}/{len(report['pairs'])}")
    if report["maa"] is not None:
        fp.write(f", mAA {report['maa']:.4f}")
    fp.write("\n")


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    entries = read_manifest(args.manifest)
    mods = mods_config(cfg, args)
    threads = resolve_threads(args.threads, cfg)
    rows = [evaluate_pair(e, args.gt_dir, cfg, mods, threads) for e in entries]
    report = _report(rows, cfg)
    with _output(args.output or cfg.output) as fp:
        json.dump(report, fp, indent=2, sort_keys=True)
        fp.write("\n")
    _print_table(report, cfg.eval.radius, sys.stderr)
    return EXIT_OK


def cmd_losslab(args: argparse.Namespace, cfg: RunConfig) -> int:
    spec = load_toy_spec(args.spec)
    trajectory = toy_optimize(
        spec.point_array(), spec.loss, steps=spec.steps, margin=spec.margin, lr=spec.lr
    )
    losses = [toy_loss(x, spec.loss, spec.margin) for x in trajectory]
    with _output(args.output or cfg.output) as fp:
        write_trajectory(fp, trajectory, losses)
    print(
        f"{spec.loss}: loss {losses[0]:.6g} -> {losses[-1]:.6g} in {spec.steps} steps",
        file=sys.stderr,
    )
    return EXIT_OK


COMMANDS = {
    "detect": cmd_detect,
    "mods": cmd_mods,
    "eval": cmd_eval,
    "losslab": cmd_losslab,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_argparse()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[args.verbosity]
    )
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (WxbsException, OSError, ValueError) as e:
        print(f"wxbs {args.command}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
