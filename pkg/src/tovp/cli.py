"""Command line interface.

Subcommands cover the full data path: simulate a scene, extract overlap
and reconstruction sets, label scans from tracked boxes, score predictions,
and sanity-check loss values.  Exit codes: 0 success, 1 usage, 2 bad data
(any package error), 3 internal failure.  Configuration resolves as
flags > config file > defaults, and every command echoes the values it ran
with.  Set TOP_LOG=debug for progress logging.
"""

import argparse
import logging
import os
import sys

import numpy as np
import yaml

from . import formats
from .errors import CountMismatch, DataError, MissingPose, SchemaViolation, TovpError
from .evaluation import EvalBox, ScanEvalInput, evaluate, object_size_cdf
from .extraction import DEFAULT_BOUNDS, ExtractionConfig, extract_sequence
from .labeling import MotionClass, ThresholdTable, box_motion_class, label_points
from .objectives import ClassWeights, overlap_loss, recon_loss, total_loss
from .recon import sample_recon_points
from .sensor_model import Scan, SensorConfig
from .simulator import simulate_scan_with_hits

log = logging.getLogger("tovp")

DEFAULTS = {
    "n_adjacent": 6,
    "scan_period_s": 0.5,
    "bounds": DEFAULT_BOUNDS,
    "divergence_angle_rad": 0.003,
    "lambda_occ": 0.9,
    "decay_rate_per_meter": 1.0,
    "seed": 0,
    "threads": 1,
    "occupied_per_beam": 5,
    "free_per_beam": 25,
    "max_tail_beyond_hit_m": None,
    "cell_size_rad": None,
    "class_weights": (1.0, 5.0, 1.0),
    "thresholds": None,
    "time_tol": 1e-3,
}

# flags override these config keys when given on the command line
_FLAG_TO_KEY = {
    "n": "n_adjacent",
    "period": "scan_period_s",
    "bounds": "bounds",
    "divergence": "divergence_angle_rad",
    "lambda_occ": "lambda_occ",
    "seed": "seed",
    "threads": "threads",
}


def _parse_bounds(text: str):
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError(
            f"bounds need 6 comma-separated numbers, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bounds not numeric: {text!r}") from None


def resolve_config(args) -> dict:
    """Merge defaults, the optional config file, and command line flags."""
    merged = dict(DEFAULTS)
    path = getattr(args, "config", None)
    if path:
        if not os.path.exists(path):
            raise DataError(f"config file not found: {path}")
        with open(path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise SchemaViolation(f"{path}: config must be a mapping")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise SchemaViolation(f"{path}: unknown config keys {sorted(unknown)}")
        merged.update(loaded)
    for flag, key in _FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    return merged


def _sensor_from(cfg: dict) -> SensorConfig:
    return SensorConfig(
        divergence_angle_rad=cfg["divergence_angle_rad"],
        occupied_confidence_threshold=cfg["lambda_occ"],
        decay_rate_per_meter=cfg["decay_rate_per_meter"],
    )


def _extraction_from(cfg: dict) -> ExtractionConfig:
    return ExtractionConfig(
        n_adjacent=cfg["n_adjacent"],
        scan_period_s=cfg["scan_period_s"],
        bounds=tuple(cfg["bounds"]),
        max_tail_beyond_hit_m=cfg["max_tail_beyond_hit_m"],
        cell_size_rad=cfg["cell_size_rad"],
        rng_seed=cfg["seed"],
    )


def _thresholds_from(cfg: dict) -> ThresholdTable:
    if cfg["thresholds"] is None:
        return ThresholdTable()
    table = {c: tuple(float(v) for v in pair)
             for c, pair in cfg["thresholds"].items()}
    return ThresholdTable(table)


def _echo(cfg: dict, keys) -> str:
    return " ".join(f"{k}={cfg[k]}" for k in keys)


def _scan_files(directory: str):
    if not os.path.isdir(directory):
        raise DataError(f"scan directory not found: {directory}")
    names = sorted(f for f in os.listdir(directory) if f.endswith(".bin"))
    if not names:
        raise DataError(f"no .bin scans in {directory}")
    return [os.path.join(directory, f) for f in names]


def _load_scan(path: str, time: float, pose) -> Scan:
    points, intensities = formats.read_scan_bin(path)
    return Scan(points=points, time=time, pose=pose, intensities=intensities)


def _world_points(scan_paths, poses_path):
    """Yield per-scan points, mapped to the box frame when poses are given."""
    poses = None
    if poses_path:
        poses = formats.read_poses(poses_path)
        if len(poses) != len(scan_paths):
            raise CountMismatch(f"{len(scan_paths)} scans but {len(poses)} poses")
    for i, path in enumerate(scan_paths):
        points, _ = formats.read_scan_bin(path)
        if poses and len(points):
            points = poses[i].apply(points)
        yield i, path, points


class _AtomicOutputs:
    """Writes go to tmp names, renamed on success; failures leave nothing."""

    def __init__(self):
        self.pending = []
        self.committed = []

    def write(self, path, writer):
        tmp = path + ".tmp"
        self.pending.append(tmp)
        writer(tmp)
        os.replace(tmp, path)
        self.pending.remove(tmp)
        self.committed.append(path)

    def discard_all(self):
        for path in self.pending + self.committed:
            try:
                os.remove(path)
            except OSError:
                pass


def cmd_extract(args) -> int:
    cfg = resolve_config(args)
    sensor = _sensor_from(cfg)
    extraction = _extraction_from(cfg)
    n = extraction.n_adjacent
    digest = formats.config_hash(extraction, sensor)

    if not os.path.exists(args.poses):
        raise MissingPose(f"pose file not found: {args.poses}")
    poses = formats.read_poses(args.poses)
    scan_paths = _scan_files(args.scans)
    if len(poses) != len(scan_paths):
        raise CountMismatch(f"{len(scan_paths)} scans but {len(poses)} poses")
    if len(scan_paths) < 2 * n + 1:
        raise DataError(f"need at least {2 * n + 1} scans for a window of "
                        f"n={n}, found {len(scan_paths)}")

    period = cfg["scan_period_s"]
    times = [k * period for k in range(len(scan_paths))]
    print(f"config: {_echo(cfg, ('n_adjacent', 'scan_period_s', 'bounds', 'divergence_angle_rad', 'lambda_occ', 'seed', 'threads'))}")
    print(f"config_hash: {digest.hex()}")

    os.makedirs(args.out, exist_ok=True)
    # thread count steers execution only; keeping it out of the echo makes
    # every output byte independent of it
    echo = {k: v for k, v in cfg.items() if k != "threads"}
    outputs = _AtomicOutputs()
    try:
        outputs.write(os.path.join(args.out, "config.json"),
                      lambda p: formats.write_report(p, _jsonable(echo)))
        for i in range(n, len(scan_paths) - n):
            current = _load_scan(scan_paths[i], times[i], poses[i])
            adjacents = [_load_scan(scan_paths[j], times[j], poses[j])
                         for j in range(i - n, i + n + 1) if j != i]
            oset = extract_sequence(current, adjacents, extraction, sensor,
                                    threads=cfg["threads"])
            rset = sample_recon_points(current, cfg["occupied_per_beam"],
                                       cfg["free_per_beam"], sensor,
                                       seed=cfg["seed"] + i)
            base = os.path.splitext(os.path.basename(scan_paths[i]))[0]
            outputs.write(os.path.join(args.out, base + ".tovp"),
                          lambda p: formats.write_overlap_file(p, oset, sensor, digest))
            outputs.write(os.path.join(args.out, base + ".trcn"),
                          lambda p: formats.write_recon_file(p, rset))
            print(f"scan {base}: {len(oset)} overlap points, "
                  f"{len(rset)} recon samples")
            log.info("extracted scan %s", base)
    except BaseException:
        outputs.discard_all()
        raise
    print(f"wrote {len(outputs.committed)} files to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    sim = formats.read_scene(args.scene)
    scans_dir = os.path.join(args.out, "scans")
    labels_dir = os.path.join(args.out, "labels")
    os.makedirs(scans_dir, exist_ok=True)
    os.makedirs(labels_dir, exist_ok=True)
    print(f"config: seed={cfg['seed']} scans={len(sim.times)} "
          f"beams={len(sim.lidar.elevation_angles_rad)}x{sim.lidar.n_azimuths}")

    boxes = sim.scene.all_boxes()
    outputs = _AtomicOutputs()
    try:
        for i, (pose, time) in enumerate(zip(sim.poses, sim.times)):
            scan, hit_box = simulate_scan_with_hits(
                sim.scene, sim.lidar, pose, time, noise_seed=cfg["seed"] + i)
            moving = np.array([box.is_moving for box in boxes], dtype=bool)
            labels = np.where((hit_box >= 0) & moving[hit_box],
                              np.uint8(MotionClass.MOVING),
                              np.uint8(MotionClass.STATIC))
            outputs.write(os.path.join(scans_dir, f"{i:06d}.bin"),
                          lambda p: formats.write_scan_bin(p, scan.points,
                                                           scan.intensities))
            outputs.write(os.path.join(labels_dir, f"{i:06d}.label"),
                          lambda p: formats.write_labels(p, labels))
            print(f"scan {i:06d}: {len(scan)} returns")
        outputs.write(os.path.join(args.out, "poses.txt"),
                      lambda p: formats.write_poses(p, sim.poses))
        tracks = _tracks_from_scene(boxes, sim.times)
        outputs.write(os.path.join(args.out, "boxes.jsonl"),
                      lambda p: formats.write_boxes(p, tracks))
        outputs.write(os.path.join(args.out, "meta.json"),
                      lambda p: formats.write_report(p, {
                          "scan_period_s": sim.period_s,
                          "n_scans": len(sim.times),
                          "seed": cfg["seed"],
                      }))
    except BaseException:
        outputs.discard_all()
        raise
    print(f"wrote {len(outputs.committed)} files to {args.out}")
    return 0


def _tracks_from_scene(boxes, times):
    from .labeling import TrackedBox

    tracks = []
    for b_idx, box in enumerate(boxes):
        centers = np.stack([box.center_at(t) for t in times])
        tracks.append(TrackedBox(
            instance_id=box.instance_id or f"box{b_idx}",
            category=box.category,
            centers=centers,
            sizes=np.tile(np.asarray(box.size, dtype=float), (len(times), 1)),
            yaws=np.full(len(times), box.yaw),
            timestamps=np.asarray(times, dtype=float),
        ))
    return tracks


def cmd_label(args) -> int:
    cfg = resolve_config(args)
    table = _thresholds_from(cfg)
    tracks = formats.read_boxes(args.boxes)
    scan_paths = _scan_files(args.scans)
    period = cfg["scan_period_s"]
    print(f"config: {_echo(cfg, ('scan_period_s', 'time_tol'))} "
          f"margin={args.margin} tracks={len(tracks)}")

    os.makedirs(args.out, exist_ok=True)
    outputs = _AtomicOutputs()
    try:
        for i, path, points in _world_points(scan_paths, args.poses):
            scan = Scan(points=points, time=i * period)
            labels = label_points(scan, tracks, table,
                                  time_tol=cfg["time_tol"], margin=args.margin)
            base = os.path.splitext(os.path.basename(path))[0]
            outputs.write(os.path.join(args.out, base + ".label"),
                          lambda p: formats.write_labels(p, labels))
    except BaseException:
        outputs.discard_all()
        raise
    print(f"wrote {len(outputs.committed)} label files to {args.out}")
    return 0


def _moving_boxes_at(tracks, time, table, tol):
    out = []
    for track in tracks:
        k = track.keyframe_at(time, tol)
        if k is None:
            continue
        if box_motion_class(track, k, table) == MotionClass.MOVING:
            out.append(EvalBox(instance_id=track.instance_id,
                               center=track.centers[k], size=track.sizes[k],
                               yaw=float(track.yaws[k])))
    return out


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    table = _thresholds_from(cfg)
    tracks = formats.read_boxes(args.boxes)
    scan_paths = _scan_files(args.scans)
    period = cfg["scan_period_s"]

    inputs = []
    for i, path, points in _world_points(scan_paths, args.poses):
        base = os.path.splitext(os.path.basename(path))[0]
        gt = formats.read_labels(os.path.join(args.labels, base + ".label"),
                                 expected_count=len(points))
        pred = formats.read_labels(
            os.path.join(args.predictions, base + ".label"),
            expected_count=len(points))
        if np.any(pred > 1):
            raise DataError(f"{base}: predictions must be 0 (static) or 1 "
                            f"(moving), found {int(pred.max())}")
        ego = None
        if args.ego_masks:
            ego = formats.read_labels(
                os.path.join(args.ego_masks, base + ".label"),
                expected_count=len(points))
        inputs.append(ScanEvalInput(
            points=points, predicted_moving=pred.astype(bool), gt_labels=gt,
            ego_mask=None if ego is None else ego.astype(bool),
            moving_boxes=tuple(_moving_boxes_at(tracks, i * period, table,
                                                cfg["time_tol"]))))

    report = evaluate(inputs)
    print(f"config: {_echo(cfg, ('scan_period_s', 'time_tol'))} "
          f"scans={len(inputs)}")
    print(f"recall_obj: {report.recall_obj:.2f}")
    print(f"iou_excluding_ego: {report.iou_excluding_ego:.2f}")
    print(f"iou_conventional: {report.iou_conventional:.2f}")
    for flag in report.flags:
        print(f"flag: {flag}")
    if args.out:
        doc = report.to_dict()
        doc["config"] = _jsonable(cfg)
        formats.write_report(args.out, doc)
        print(f"report written to {args.out}")
    return 0


def cmd_stats(args) -> int:
    cfg = resolve_config(args)
    if args.counts:
        with open(args.counts) as fh:
            try:
                counts = [int(line) for line in fh if line.strip()]
            except ValueError as e:
                raise DataError(f"{args.counts}: {e}") from None
    else:
        if not (args.scans and args.boxes):
            raise DataError("stats needs either --counts or --scans with --boxes")
        from ._boxes import points_in_box

        tracks = formats.read_boxes(args.boxes)
        period = cfg["scan_period_s"]
        counts = []
        for i, _, points in _world_points(_scan_files(args.scans), args.poses):
            for track in tracks:
                k = track.keyframe_at(i * period, cfg["time_tol"])
                if k is None:
                    continue
                inside = int(np.sum(points_in_box(
                    points, track.centers[k], track.sizes[k], track.yaws[k])))
                if inside > 0:
                    counts.append(inside)
    if not counts:
        raise DataError("no objects with points to summarize")
    cdf = object_size_cdf(counts)
    share = cdf.point_share(args.percentile)
    print(f"objects: {len(cdf.counts)}")
    print(f"points: {int(cdf.counts.sum())}")
    print("objects%  points%")
    for decile in range(10, 101, 10):
        print(f"{decile:7d}  {cdf.point_share(decile):7.3f}")
    print(f"{args.percentile:g}% objects -> {share:g}% points")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("object_points,object_fraction,point_fraction\n")
            for c, of, pf in zip(cdf.counts, cdf.object_fraction, cdf.point_fraction):
                fh.write(f"{int(c)},{of:.9f},{pf:.9f}\n")
        print(f"wrote curve to {args.csv}")
    return 0


def cmd_loss_check(args) -> int:
    cfg = resolve_config(args)
    weights = ClassWeights(*cfg["class_weights"])
    oset, info = formats.read_overlap_file(args.overlaps)
    probs = formats.read_probabilities(args.probs, expected_count=len(oset))
    print(f"config: class_weights={cfg['class_weights']} "
          f"config_hash={info.config_hash.hex()}")
    value = overlap_loss(oset.records["state"], oset.records["confidence"],
                         probs, weights)
    print(f"overlap_loss: {value:.9f}")
    if args.recon:
        if not args.recon_probs:
            raise DataError("--recon needs --recon-probs")
        rset = formats.read_recon_file(args.recon)
        rprobs = formats.read_probabilities(args.recon_probs,
                                            expected_count=len(rset))
        beams = np.unique(rset.records["current_index"])
        if len(rset) % max(len(beams), 1) != 0:
            raise CountMismatch(f"{len(rset)} samples do not divide evenly "
                                f"over {len(beams)} beams")
        per_beam = len(rset) // len(beams)
        rvalue = recon_loss(rset.records["state"], rprobs, weights,
                            n_beams=len(beams), per_beam=per_beam)
        print(f"recon_loss: {rvalue:.9f}")
        print(f"total_loss: {total_loss(value, rvalue):.9f}")
    return 0


def _jsonable(cfg: dict) -> dict:
    out = {}
    for key, value in cfg.items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--n", type=int, help="adjacent scans per side")
    common.add_argument("--period", type=float, help="scan period in seconds")
    common.add_argument("--bounds", type=_parse_bounds,
                        help="crop box x0,x1,y0,y1,z0,z1")
    common.add_argument("--divergence", type=float,
                        help="beam divergence angle in radians")
    common.add_argument("--lambda-occ", type=float, dest="lambda_occ",
                        help="occupied-band confidence threshold")

    parser = argparse.ArgumentParser(
        prog="tovp",
        description="Temporal overlap extraction and occupancy supervision.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common],
                       help="extract overlap and recon sets from a scan dir")
    p.add_argument("--scans", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("simulate", parents=[common],
                       help="render a scene file into scans, poses, labels")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("label", parents=[common],
                       help="label scan points from tracked boxes")
    p.add_argument("--scans", required=True)
    p.add_argument("--boxes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--poses", help="map sensor-frame scans into the box frame")
    p.add_argument("--margin", type=float, default=0.0,
                   help="grow boxes by this much on every face [m]")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", parents=[common],
                       help="score moving-object predictions")
    p.add_argument("--scans", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--boxes", required=True)
    p.add_argument("--poses", help="map sensor-frame scans into the box frame")
    p.add_argument("--ego-masks", dest="ego_masks")
    p.add_argument("--out", help="write the full JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", parents=[common],
                       help="object size distribution")
    p.add_argument("--counts", help="text file, one point count per line")
    p.add_argument("--scans")
    p.add_argument("--boxes")
    p.add_argument("--poses", help="map sensor-frame scans into the box frame")
    p.add_argument("--percentile", type=float, default=75.0)
    p.add_argument("--csv", help="write the full per-object curve here")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("loss-check", parents=[common],
                       help="recompute reference losses for stored sets")
    p.add_argument("--overlaps", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--recon")
    p.add_argument("--recon-probs", dest="recon_probs")
    p.set_defaults(func=cmd_loss_check)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("TOP_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors, 0 on --help
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except TovpError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
