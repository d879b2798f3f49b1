"""Command-line entry point: ``bevplan {lift,plan,learn,simulate,metrics,bundle}``.

Exit codes
----------
0  success
1  invalid configuration or other domain error
2  missing input file or empty directory
3  malformed file header or dimension mismatch
4  no feasible candidate after filtering
5  degenerate data or empty manifest
"""

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bevg import channels_to_seq, read_bevg, write_bevg
from .config import RunConfig, load_config
from .exceptions import (BevplanError, ConfigurationError, DegenerateDataError, DomainError,
                         FormatError)
from .geometry import FeatureImage, PillarLifter, load_rig
from .learning import MaxMarginCostLearner
from .metrics import metric_iou, metric_l2_at_horizon, metric_sr_rl
from .planner import FEATURE_NAMES, CostMapPlanner
from .scenarios import list_suite, load_scenario, load_training_examples, write_bundle
from .semgrid import CLASSES, FORECASTERS, SemanticGridSeq
from .sim import EpisodeResult, run_episode
from .trajectory import SdvState, format_float, read_route, read_trajectory_csv, trajectory_to_csv

log = logging.getLogger("bevplan")

EXIT_OK, EXIT_ERROR, EXIT_MISSING, EXIT_FORMAT, EXIT_INFEASIBLE, EXIT_DEGENERATE = range(6)
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _require(path, what="file"):
    path = Path(path)
    if not path.exists():
        raise CliError(EXIT_MISSING, f"missing {what}: {path}")
    return path


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, **overrides):
    return load_config(args.config, seed=args.seed, **overrides)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# -- lift -----------------------------------------------------------------------

def cmd_lift(args):
    cfg = _config(args)
    cameras = load_rig(_require(args.rig, "rig config"))
    feat_dir = _require(args.features, "feature directory")
    depths = cfg.depth_set()
    frames = []
    for t in range(args.frames):
        images = []
        for k in range(1, len(cameras) + 1):
            path = _require(feat_dir / f"frame{t}_cam{k}.bevg", "feature dump")
            try:
                images.append(FeatureImage.from_array(read_bevg(path), depths.count))
            except DomainError as exc:
                raise FormatError(f"{path}: {exc}") from exc
        frames.append(images)
    lifter = PillarLifter(cameras, depths, cfg.grid_spec(), n_frames=args.frames)
    try:
        grids = [lifter.lift_frame(images, timestamp=t) for t, images in enumerate(frames)]
    except DomainError as exc:
        raise FormatError(str(exc)) from exc
    n_points = depths.count * sum(img.dims[0] * img.dims[1] for images in frames for img in images)
    dropped = sum(g.n_dropped for g in grids)
    bev = np.concatenate([g.values for g in grids], axis=-1)
    out = _out_dir(args)
    write_bevg(out / "bev.bevg", bev)
    cfg.dump(out / "config.json")
    if args.csv:
        print(f"points,dropped,channels\n{n_points},{dropped},{bev.shape[-1]}")
    else:
        print(f"lifted {n_points} points ({dropped} outside the grid) into {out / 'bev.bevg'}")
    return EXIT_OK


# -- plan -----------------------------------------------------------------------

def _parse_ego(text):
    try:
        x, y, theta, v = (float(s) for s in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"--ego expects x,y,theta,v: {exc}") from exc
    return SdvState(x, y, theta, 0.0, v)


def _planner(cfg):
    return CostMapPlanner(cfg.cost_weights(), cfg.comfort(), cfg.sampler_config(),
                          cfg.footprint, cfg.reduction)


def _forecaster(cfg, name=None):
    return FORECASTERS[name or cfg.forecaster](cfg.grid_spec())


def cmd_plan(args):
    cfg = _config(args, forecaster=args.forecaster)
    if args.scenario:
        scn = load_scenario(_require(args.scenario, "scenario"))
        ego, route = scn.ego, scn.route
        maps = _forecaster(cfg)(replace(scn.world, ego_pose=(ego.x, ego.y, ego.theta)))
    else:
        if not (args.maps and args.route and args.ego):
            raise ConfigurationError("plan needs a scenario or --maps, --route and --ego")
        spec = cfg.grid_spec()
        raw = read_bevg(_require(args.maps, "map dump"))
        if raw.shape[:2] != spec.shape or raw.shape[2] % len(CLASSES):
            raise FormatError(f"{args.maps}: dims {raw.shape} do not match grid {spec.shape} "
                              f"x (frames * {len(CLASSES)})")
        ego = _parse_ego(args.ego)
        route = read_route(_require(args.route, "route file"))
        maps = SemanticGridSeq(channels_to_seq(raw, len(CLASSES)), spec, (ego.x, ego.y, ego.theta))
    result = _planner(cfg).plan(ego, route, maps)
    if result.trajectory is None:
        raise CliError(EXIT_INFEASIBLE, "no feasible candidate after filtering")
    out = _out_dir(args)
    traj_csv = trajectory_to_csv(result.trajectory)
    (out / "trajectory.csv").write_text(traj_csv)
    rows = []
    for k, cand in enumerate(result.candidates):
        phi = ["" if np.isnan(v) else format_float(v) for v in result.features[k]]
        cost = "" if not np.isfinite(result.costs[k]) else format_float(result.costs[k])
        rows.append([k, format_float(cand.offset), format_float(cand.profile), int(cand.feasible),
                     *phi, cost, int(k == result.index)])
    _write_csv(out / "costs.csv", ["index", "offset", "profile", "feasible", *FEATURE_NAMES,
                                   "cost", "selected"], rows)
    cfg.dump(out / "config.json")
    if args.csv:
        sys.stdout.write(traj_csv)
    else:
        c = result.candidates[result.index]
        print(f"selected candidate {result.index} (offset {c.offset:g} m, accel {c.profile:g} m/s^2), "
              f"cost {result.costs[result.index]:.4f}; {int(np.isfinite(result.costs).sum())} "
              f"of {len(result.candidates)} feasible")
    return EXIT_OK


# -- learn ----------------------------------------------------------------------

def cmd_learn(args):
    cfg = _config(args)
    manifest = _require(args.manifest, "manifest")
    examples = load_training_examples(manifest, cfg.comfort(), cfg.footprint,
                                      cfg.training_sampler_config())
    if not examples:
        raise CliError(EXIT_DEGENERATE, f"empty manifest: {manifest}")
    lc = cfg.learner_config()
    learner = MaxMarginCostLearner(lc.learning_rate, lc.iterations, None, cfg.loss_weight_set(),
                                   random_state=cfg.seed).fit(examples)
    out = _out_dir(args)
    learner.weights_.save(out / "weights.txt")
    _write_csv(out / "loss_curve.csv", ["iteration", "loss"],
               [[k, format_float(v)] for k, v in enumerate(learner.loss_curve_)])
    cfg.dump(out / "config.json")
    first, last = learner.loss_curve_[0], learner.loss_curve_[-1]
    if args.csv:
        print(f"examples,initial_loss,final_loss\n{len(examples)},{format_float(first)},{format_float(last)}")
    else:
        print(f"{len(examples)} examples; mean planning loss {first:.4f} -> {last:.4f}")
    return EXIT_OK


# -- simulate -------------------------------------------------------------------

def _episode(job):
    scn_path, seed, cfg_dict = job
    cfg = RunConfig(**cfg_dict)
    scn = load_scenario(scn_path)
    r = run_episode(scn, _planner(cfg), _forecaster(cfg), seed=seed, suite_seed=cfg.seed)
    return r.scenario, r.seed, r.outcome, r.driving_time, r.route_time


def cmd_simulate(args):
    cfg = _config(args, forecaster=args.forecaster, episodes=args.episodes)
    suite = _require(args.suite, "suite directory")
    paths = list_suite(suite)
    if not paths:
        raise CliError(EXIT_MISSING, f"no scenario files in {suite}")
    readable = []
    for p in paths:
        try:
            load_scenario(p)
            readable.append(p)
        except (BevplanError, OSError, ValueError) as exc:
            log.warning("skipping unreadable scenario %s: %s", p, exc)
    if not readable:
        raise CliError(EXIT_FORMAT, f"every scenario in {suite} was unreadable")
    jobs = [(str(p), k, cfg.to_dict()) for p in readable for k in range(cfg.episodes)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_episode, jobs))
    else:
        rows = [_episode(j) for j in jobs]
    out = _out_dir(args)
    _write_csv(out / "results.csv", ["scenario", "seed", "outcome", "time", "route_time"],
               [[n, s, o, format_float(t), format_float(rt)] for n, s, o, t, rt in rows])
    cfg.dump(out / "config.json")
    sr, rl = metric_sr_rl([EpisodeResult(*r) for r in rows])
    if args.csv:
        print(f"episodes,sr,rl\n{len(rows)},{sr:.2f},{rl:.2f}")
    else:
        print(f"{len(rows)} episodes over {len(readable)} scenarios: SR {sr:.2f}%  RL {rl:.2f}%")
    return EXIT_OK


# -- metrics --------------------------------------------------------------------

def cmd_metrics(args):
    a, b = _require(args.first), _require(args.second)
    if a.suffix == ".csv" and b.suffix == ".csv":
        d = metric_l2_at_horizon(read_trajectory_csv(a), read_trajectory_csv(b))
        print(f"l2_5s\n{d:.4f}" if args.csv else f"l2 at 5 s: {d:.4f} m")
        return EXIT_OK
    pred, gt = read_bevg(a), read_bevg(b)
    if pred.shape != gt.shape:
        raise FormatError(f"dims differ: {pred.shape} vs {gt.shape}")
    C = len(CLASSES)
    if pred.shape[-1] % C == 0:
        # single grids and stacked sequences both reduce to per-class IoU
        pred, gt = channels_to_seq(pred, C), channels_to_seq(gt, C)
        names = CLASSES
        iou = metric_iou(pred.reshape(-1, C), gt.reshape(-1, C), args.threshold)
    else:
        names = [f"channel{k}" for k in range(pred.shape[-1])]
        iou = metric_iou(pred, gt, args.threshold)
    rows = [[n, f"{v:.2f}"] for n, v in zip(names, iou)] + [["mean", f"{np.mean(iou):.2f}"]]
    if args.csv:
        sys.stdout.write(_write_csv(None, ["class", "iou"], rows))
    else:
        for n, v in rows:
            print(f"{n:>12s}  {v}")
    return EXIT_OK


# -- bundle ---------------------------------------------------------------------

def cmd_bundle(args):
    out = _out_dir(args)
    written = write_bundle(out, seed=args.seed if args.seed is not None else 0)
    print(f"wrote {len(written)} files under {out}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel episodes (simulate)")
    common.add_argument("--csv", action="store_true", help="machine-readable CSV on stdout")
    common.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="bevplan", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter,
                                     epilog=__doc__.split("\n", 2)[2])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lift", parents=[common], help="lift camera feature dumps to a BEV grid")
    p.add_argument("--rig", required=True, help="camera rig INI")
    p.add_argument("--features", required=True, help="directory of frame{t}_cam{k}.bevg dumps")
    p.add_argument("--frames", type=int, default=5)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("plan", parents=[common], help="select a trajectory for one scene")
    p.add_argument("scenario", nargs="?", help="scenario JSON")
    p.add_argument("--maps", help="BEVG grid-sequence dump (instead of a scenario)")
    p.add_argument("--route", help="route file to use with --maps")
    p.add_argument("--ego", help="x,y,theta,v to use with --maps")
    p.add_argument("--forecaster", choices=sorted(FORECASTERS))
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("learn", parents=[common], help="learn cost weights from a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("simulate", parents=[common], help="closed-loop runs over a scenario suite")
    p.add_argument("suite", help="directory of scenario JSON files")
    p.add_argument("--episodes", type=int, help="seeds per scenario")
    p.add_argument("--forecaster", choices=sorted(FORECASTERS))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", parents=[common], help="IoU of two grid dumps or l2 of two trajectories")
    p.add_argument("first", help="prediction (.bevg) or plan (.csv)")
    p.add_argument("second", help="ground truth (.bevg) or human (.csv)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bundle", parents=[common], help="write the bundled suite, dataset and fixtures")
    p.set_defaults(func=cmd_bundle)
    return parser


def main(argv=None):
    level = LOG_LEVELS.get(os.environ.get("BEVPLAN_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
