"""Command-line front end.

Correspondence files are JSON objects::

    {"format": "planar-p4pfr/1", "world": [[X, Y, Z], ...], "image": [[x, y], ...]}

with an optional ``image_scale_hint``. Output documents use the same format tag.
Exit codes: 0 success, 2 valid input but no solution, 1 bad input or flags.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import P4PError
from .robust import RansacConfig, ransac_pose
from .scene import SceneConfig, benchmark_histogram, random_instance
from .solver import solve_detailed

FORMAT = "planar-p4pfr/1"


class InputError(Exception):
    kind = "input"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _nums(a):
    return [_num(v) for v in np.ravel(a)]


def solution_record(sol) -> dict:
    return {
        "R": _nums(sol.R),
        "t": _nums(sol.t),
        "f": _num(sol.f),
        "k": _num(sol.k),
        "max_reproj_err": _num(sol.max_reproj_err),
        "per_point_err": _nums(sol.reproj_errors),
    }


def read_correspondences(path, exact: int | None = None):
    """Parse a correspondence file; raises :class:`InputError`."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"malformed JSON: {e}") from None
    if not isinstance(doc, dict):
        raise InputError("top level must be an object")
    if doc.get("format", FORMAT) != FORMAT:
        raise InputError(f"unsupported format {doc['format']!r}")
    try:
        world = np.asarray(doc["world"], dtype=np.float64)
        image = np.asarray(doc["image"], dtype=np.float64)
    except KeyError as e:
        raise InputError(f"missing field {e.args[0]!r}") from None
    except (TypeError, ValueError):
        raise InputError("world and image must be numeric arrays") from None
    if world.ndim != 2 or world.shape[1] != 3:
        raise InputError("world must be a list of [X, Y, Z] triples")
    if image.ndim != 2 or image.shape[1] != 2:
        raise InputError("image must be a list of [x, y] pairs")
    if world.shape[0] != image.shape[0]:
        raise InputError("world and image lengths differ")
    if not (np.all(np.isfinite(world)) and np.all(np.isfinite(image))):
        raise InputError("non-finite coordinates")
    n = world.shape[0]
    if exact is not None and n != exact:
        raise InputError(f"need exactly {exact} points")
    if n < 4:
        raise InputError("need at least 4 points")
    return world, image


def _emit(doc: dict, out_path=None) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _fail(kind: str, message: str, out_path=None) -> int:
    print(f"{kind}: {message}", file=sys.stderr)
    if out_path:
        _emit({"format": FORMAT, "error": {"kind": kind, "message": message}}, out_path)
    return 1


def cmd_solve(args) -> int:
    try:
        world, image = read_correspondences(args.file, exact=4)
        report = solve_detailed(world, image)
    except (InputError, P4PError) as e:
        return _fail(e.kind, str(e), args.json_out)
    doc = {
        "format": FORMAT,
        "solutions": [solution_record(s) for s in report.solutions],
        "rejections": [{"beta": _num(r.beta), "reason": r.reason} for r in report.rejections],
    }
    _emit(doc, args.json_out)
    return 0 if report.solutions else 2


def cmd_ransac(args) -> int:
    if args.iters < 1:
        return _fail("input", "iters must be ≥ 1")
    if not args.threshold > 0:
        return _fail("input", "threshold must be > 0")
    try:
        world, image = read_correspondences(args.file)
        config = RansacConfig(max_iters=args.iters, inlier_threshold=args.threshold, seed=args.seed, refine=not args.no_refine)
        result = ransac_pose(world, image, config)
    except (InputError, P4PError) as e:
        return _fail(e.kind, str(e))
    if result is None:
        _emit({"format": FORMAT, "solution": None, "inlier_mask": None, "iterations_run": None})
        return 2
    _emit({
        "format": FORMAT,
        "solution": solution_record(result.solution),
        "inlier_mask": [bool(m) for m in result.inlier_mask],
        "n_inliers": result.n_inliers,
        "iterations_run": result.iterations_run,
    })
    return 0


def _truth_path(path: Path) -> Path:
    return path.with_name(f"{path.stem}.truth.json")


def emit_instance(path, seed: int) -> tuple[Path, Path]:
    """Write one default-generator instance and its ground-truth sidecar."""
    gt = random_instance(SceneConfig(seed=seed))
    path = Path(path)
    _emit({"format": FORMAT, "world": gt.world3d.tolist(), "image": gt.image.tolist()}, path)
    truth = _truth_path(path)
    _emit({
        "format": FORMAT, "seed": seed, "R": _nums(gt.R), "t": _nums(gt.t),
        "f": gt.f, "k": gt.k, "depths": _nums(gt.depths),
    }, truth)
    return path, truth


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("range must be 'lo,hi'") from None
    if not hi > lo:
        raise argparse.ArgumentTypeError("range needs lo < hi")
    return lo, hi


def cmd_bench(args) -> int:
    if args.emit_one:
        emit_instance(args.emit_one, args.seed)
        return 0
    if args.n is None or args.n < 1:
        return _fail("input", "n must be ≥ 1")
    if not args.bins > 0:
        return _fail("input", "bins must be > 0")
    result = benchmark_histogram(args.n, SceneConfig(seed=args.seed), bin_width=args.bins, range=args.range)
    if args.out == "-":
        result.write_csv(sys.stdout)
        summary = sys.stderr
    else:
        with open(args.out, "w", newline="\n") as fh:
            result.write_csv(fh)
        summary = sys.stdout
    for line in result.summary_lines():
        print(line, file=summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="planar-p4pfr", description="Planar four-point pose with unknown focal length and radial distortion.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve a four-point correspondence file")
    s.add_argument("file")
    s.add_argument("--json-out", metavar="PATH", help="write the result here instead of stdout")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="error histogram over random instances")
    b.add_argument("--n", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--bins", type=float, default=0.2, help="bin width in log10 units")
    b.add_argument("--range", type=_parse_range, default=(-20.0, -3.0), metavar="LO,HI")
    b.add_argument("--out", default="-", help="histogram CSV path ('-' for stdout)")
    b.add_argument("--emit-one", metavar="PATH", help="write instance --seed and a .truth.json sidecar, then exit")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("ransac", help="robust pose from n >= 4 correspondences")
    r.add_argument("file")
    r.add_argument("--threshold", type=float, default=2.0)
    r.add_argument("--iters", type=int, default=1000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--no-refine", action="store_true")
    r.set_defaults(func=cmd_ransac)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)
