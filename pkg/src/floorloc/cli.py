"""floorloc command line: generate, train, localize, eval, render, plot.

Every command writes ``manifest.json`` next to its outputs with the argv, the
resolved parameters and the derived seeds, so a run can be repeated from the
manifest alone. Failures print one ``floorloc: error: ...`` line and exit 1;
bad flags exit 2 via argparse.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .embed import (LayoutTrainConfig, QueryTrainConfig, load_params, save_params,
                    train_layout_branch, train_query_branch)
from .embed.training import QUERY_LOSSES
from .localize import STAGE_PRESETS, PipelineConfig, build_database, localize_full
from .metrics import KINDS
from .render import (EMBED_DIMS, read_depth, render_furnished_depth, render_layout_depth,
                     write_depth)
from .scene import (DEFAULT_CLEARANCE, LEVELS, Pose, extrude, load_furnished, load_plan,
                    save_plan)

log = logging.getLogger("floorloc")


class CLIError(RuntimeError):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _pose(text: str) -> Pose:
    parts = text.split(",")
    try:
        x, y = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y got {text!r}") from None
    return Pose(x, y)


def _int_list(text: str) -> tuple:
    try:
        vals = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("sample counts must be >= 1")
    return vals


def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Pose):
        return [obj.x, obj.y]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_manifest(out_dir: Path, args, **resolved) -> Path:
    params = {k: v for k, v in vars(args).items() if k not in ("func", "argv")}
    doc = {"floorloc_version": __version__, "command": args.command,
           "argv": args.argv, "args": _jsonable(params), **_jsonable(resolved)}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plan_files(folder) -> list:
    folder = Path(folder)
    if not folder.is_dir():
        raise CLIError(f"scene corpus {folder} does not exist")
    files = sorted(p for p in folder.glob("*.json") if p.name not in ("manifest.json", "queries.json"))
    if not files:
        raise CLIError(f"no plan files in {folder}")
    return files


def _write_trace(path: Path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for k, v in enumerate(trace):
            w.writerow([k, repr(float(v))])


# -- commands ---------------------------------------------------------------

def cmd_generate(args):
    from .eval.corpus import CorpusConfig, corpus_scene
    out = _out_dir(args.out)
    cfg = CorpusConfig(n_scenes=args.scenes, queries_per_scene=args.queries, level=args.level,
                       kind=args.kind, seed=args.seed, clearance=args.clearance)
    queries = {}
    for k in range(args.scenes):
        scene = corpus_scene(cfg, k)
        name = f"scene_{k:03d}.json"
        save_plan(out / name, scene.furnished)
        queries[name] = [[q.x, q.y] for q in scene.queries]
    (out / "queries.json").write_text(json.dumps(queries, indent=1))
    write_manifest(out, args, corpus=cfg.describe())
    print(f"wrote {args.scenes} scenes to {out}")


def cmd_train(args):
    out = _out_dir(args.out)
    plans = [load_plan(p) for p in _plan_files(args.scenes)]
    if args.branch == "layout":
        cfg = LayoutTrainConfig(seed=args.seed, **({"epochs": args.epochs} if args.epochs else {}))
        params, trace = train_layout_branch(plans, cfg)
    else:
        if not args.layout_params:
            raise CLIError("query-branch training needs trained layout-branch params (--layout-params)")
        layout = load_params(args.layout_params)
        kw = {"loss": args.loss, "level": args.level}
        if args.epochs:
            kw["epochs"] = args.epochs
        cfg = QueryTrainConfig(seed=args.seed, **kw)
        params, trace = train_query_branch(plans, layout, cfg)
    save_params(out / f"{args.branch}.params", params)
    _write_trace(out / f"{args.branch}_trace.csv", trace)
    write_manifest(out, args, config=cfg, n_plans=len(plans),
                   final_loss=trace[-1], initial_loss=trace[0])
    print(f"{args.branch} branch: loss {trace[0]:.5f} -> {trace[-1]:.5f}")


def cmd_localize(args):
    plan = load_plan(args.plan)
    layout = load_params(args.layout_params)
    query_params = load_params(args.query_params) if args.query_params else None
    query = read_depth(args.query)
    db = build_database(plan, args.resolution, layout, EMBED_DIMS, args.clearance)
    cfg = PipelineConfig.preset(args.stages, vdr_n=args.vdr_n)
    result = localize_full(query, plan, db, layout, cfg, query_params, gt_pose=args.gt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.to_dict(), indent=1))
    write_manifest(out.parent, args, pipeline=cfg, grid_size=len(db))
    p = result.final_pose
    print(f"final pose {p.x:.4f},{p.y:.4f}" + ("" if result.error is None else f" error {result.error:.4f} m"))


def cmd_render(args):
    if args.furnished:
        scene = load_furnished(args.plan)
        pano = render_furnished_depth(scene, args.pose, args.width, args.height)
    else:
        pano = render_layout_depth(extrude(load_plan(args.plan)), args.pose, args.width, args.height)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_depth(out, pano)
    write_manifest(out.parent, args)
    print(f"wrote {args.width}x{args.height} depth to {out}")


def _scorer(plan, args):
    from .eval.oracle import EmbeddingScorer, oracle_embedder
    if args.layout_params:
        params = load_params(args.layout_params)
        db = build_database(plan, args.resolution, params, EMBED_DIMS, args.clearance, keep_depths=True)
        return EmbeddingScorer(db, params)
    return oracle_embedder(plan, args.metric, args.resolution, clearance=args.clearance)


def cmd_plot(args):
    from .eval.figures import distance_field_svg, plot_distance_field
    plan = load_plan(args.plan)
    if not plan.contains(args.pose.as_array()[None])[0]:
        raise CLIError(f"pose ({args.pose.x}, {args.pose.y}) lies outside every room")
    scorer = _scorer(plan, args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(distance_field_svg(plan, args.pose, scorer))
    if args.png:
        plot_distance_field(plan, args.pose, scorer, args.png)
    write_manifest(out.parent, args, scorer=scorer.kind)
    print(f"wrote {out}")


def _eval_setup(args):
    from .eval.suite import EvalSetup
    layout = load_params(args.layout_params) if args.layout_params else None
    query = load_params(args.query_params) if args.query_params else None
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    return EvalSetup(methods=methods, layout_params=layout, query_params=query)


def cmd_eval(args):
    from .eval import (CorpusConfig, furniture_sweep, grid_resolution_sweep, metric_ablation,
                       vdr_sweep, write_report)
    from .eval.figures import distance_field_svg, plot_error_cdf, plot_vdr_sweep
    from .eval.oracle import oracle_embedder
    from .eval.suite import evaluate_suite
    out = _out_dir(args.out)
    corpus = CorpusConfig(n_scenes=args.scenes, queries_per_scene=args.queries,
                          resolution=args.resolution, clearance=args.clearance,
                          level=args.level, kind=args.kind, seed=args.seed)
    setup = _eval_setup(args)
    if args.suite == "main":
        report = evaluate_suite(corpus, setup, args.jobs, "main")
    elif args.suite == "metric-ablation":
        report = metric_ablation(corpus, args.jobs)
    elif args.suite == "furniture":
        report = furniture_sweep(corpus, setup, jobs=args.jobs)
    elif args.suite == "grid-resolution":
        report = grid_resolution_sweep(corpus, setup, jobs=args.jobs)
    else:
        report = vdr_sweep(corpus, setup, args.n, args.jobs)
    stem = args.suite.replace("-", "_")
    paths = write_report(report, out, stem)
    plot_error_cdf(report, out / f"{stem}_cdf.png")
    if args.suite == "vdr-sweep":
        plot_vdr_sweep(report, out / f"{stem}_medians.png")
    if args.fields:
        from .eval.corpus import corpus_scene
        scene = corpus_scene(corpus, 0)
        scorer = oracle_embedder(scene.plan, "chamfer3d", corpus.resolution, clearance=corpus.clearance)
        for k, q in enumerate(scene.queries[:args.fields]):
            (out / f"{stem}_field_{k}.svg").write_text(distance_field_svg(scene.plan, q, scorer))
    write_manifest(out, args, corpus=corpus.describe(), methods=report.methods,
                   outputs=[p.name for p in paths])
    print(open(out / f"{stem}.md").read(), end="")


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="floorloc", description="Floor-plan localisation from panoramic depth.")
    ap.add_argument("--version", action="version", version=f"floorloc {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=int, default=0, help="master seed; sub-seeds are derived by name")
        p.add_argument("--clearance", type=float, default=DEFAULT_CLEARANCE, help="min wall distance (m)")

    p = sub.add_parser("generate", help="write a seeded corpus of furnished floor plans")
    p.add_argument("--scenes", type=_positive_int, required=True)
    p.add_argument("--queries", type=_positive_int, default=10, help="query poses per scene")
    p.add_argument("--kind", choices=("desk", "ambiguity"), default="desk")
    p.add_argument("--level", choices=LEVELS, default="full")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the layout or query branch")
    p.add_argument("branch", choices=("layout", "query"))
    p.add_argument("--scenes", required=True, help="directory of plan JSON files")
    p.add_argument("--layout-params", help="trained layout params (query branch only)")
    p.add_argument("--loss", choices=QUERY_LOSSES, default="l2")
    p.add_argument("--level", choices=LEVELS, default="full", help="query-branch furniture level")
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("localize", help="localise one query depth render in a plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--query", required=True, help="64x32 depth file")
    p.add_argument("--layout-params", required=True)
    p.add_argument("--query-params")
    p.add_argument("--stages", choices=sorted(STAGE_PRESETS), default="vdr+lpo")
    p.add_argument("--resolution", type=_positive_float, default=0.5)
    p.add_argument("--vdr-n", type=_positive_int, default=200)
    p.add_argument("--gt", type=_pose, help="ground-truth x,y to report the error")
    p.add_argument("--out", required=True, help="result JSON path")
    common(p, seed=False)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval", help="run an evaluation suite on a seeded corpus")
    p.add_argument("suite", choices=("main", "metric-ablation", "furniture", "grid-resolution", "vdr-sweep"))
    p.add_argument("--scenes", type=_positive_int, default=20)
    p.add_argument("--queries", type=_positive_int, default=10)
    p.add_argument("--kind", choices=("desk", "ambiguity"), default="desk")
    p.add_argument("--level", choices=LEVELS, default="full")
    p.add_argument("--resolution", type=_positive_float, default=0.5)
    p.add_argument("--methods", default="oracle,icp,lalaloc", help="comma list (main, furniture, grid-resolution)")
    p.add_argument("--n", type=_int_list, default=(1, 10, 50, 200), help="Vogel sample counts for vdr-sweep")
    p.add_argument("--layout-params")
    p.add_argument("--query-params")
    p.add_argument("--fields", type=int, default=0, help="distance-field SVGs for the first scene's queries")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="debug render of one pose to a depth file")
    p.add_argument("--plan", required=True)
    p.add_argument("--pose", type=_pose, required=True, help="x,y")
    p.add_argument("--width", type=_positive_int, default=EMBED_DIMS[0])
    p.add_argument("--height", type=_positive_int, default=EMBED_DIMS[1])
    p.add_argument("--furnished", action="store_true", help="include the plan's furniture")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("plot", help="distance-field SVG for one query pose")
    p.add_argument("--plan", required=True)
    p.add_argument("--pose", type=_pose, required=True, help="x,y")
    p.add_argument("--metric", choices=KINDS, default="chamfer3d")
    p.add_argument("--layout-params", help="score by learned embedding instead of a metric")
    p.add_argument("--resolution", type=_positive_float, default=0.5)
    p.add_argument("--png", help="also write a PNG rendering")
    p.add_argument("--out", required=True)
    common(p, seed=False)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s %(levelname)s %(message)s")
    try:
        args.func(args)
    except (CLIError, ValueError, RuntimeError, OSError, KeyError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"floorloc: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
