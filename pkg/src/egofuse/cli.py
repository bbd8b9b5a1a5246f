"""``egofuse`` command line: sim, fuse, doppler, cube, eval, mc.

Exit codes: 0 success, 2 input error, 3 numerical failure.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .doppler import ls_velocity, ransac_velocity, to_measurement
from .errors import InputError, NoConsensus, NumericalError, RankDeficient, TooFew
from .fusion import Extrinsics, run_filter
from .geom import IDENTITY_QUAT
from .harness import (align, coarse_init, compute_metrics, monte_carlo,
                      simulate, thread_count)
from .inertial import NominalState
from .radarcube import (DOMAIN_ADC, DOMAIN_PROCESSED, AdcCube, PointTarget, RadarCube, RadarParams,
                        extract_detections, on_grid_target, process_cube, read_rdc1,
                        synthesize_adc, write_rdc1)
from .sim import Scenario

log = logging.getLogger("egofuse")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


def load_scenario(path, seed=None):
    sc = Scenario.from_dict(io.load_toml(path)) if path else Scenario()
    return sc if seed is None else sc.with_seed(seed)


def load_filter_config(path):
    return io.filter_config_from_dict(io.load_toml(path) if path else {})


def cmd_sim(args):
    sc = load_scenario(args.scenario, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate(sc, detections=True)
    io.write_imu(out / "imu.csv", data.imu)
    io.write_gt(out / "gt.csv", data.truth)
    io.write_radar(out / "radar_vel.csv", data.radar)
    io.write_detections(out / "detections.csv", data.detections)
    io.write_calibration(out / "calib.json", sc.extrinsics)
    log.info("wrote %d IMU samples and %d radar frames to %s", len(data.imu), len(data.radar), out)
    return EXIT_OK


def _initial_state(args, imu, radar):
    if args.init_from:
        t, q, v = io.read_gt(args.init_from)
        k = int(np.argmin(np.abs(t - imu[0].t)))
        return NominalState(q=q[k] / np.linalg.norm(q[k]), v=v[k])
    return coarse_init(imu, radar)


def cmd_fuse(args):
    imu = io.read_imu(args.imu)
    if not imu:
        raise InputError("IMU file is empty")
    radar = io.read_radar(args.radar)
    ex, gravity = io.read_calibration(args.calib) if args.calib else (None, None)
    cfg, x0 = load_filter_config(args.config)
    cfg = replace(cfg, use_predicted_sigma=args.use_sigma)
    if gravity is not None:
        cfg = replace(cfg, gravity=gravity)
    if ex is None:
        ex = Extrinsics()
    if x0 is None:
        x0 = _initial_state(args, imu, radar)
    recs = run_filter(imu, radar, ex, cfg, x0=x0)
    io.write_estimates(args.out, recs)
    n_upd = sum(r.report is not None for r in recs)
    n_acc = sum(r.report is not None and r.report.accepted for r in recs)
    log.info("fused %d samples, %d/%d updates accepted", len(recs), n_acc, n_upd)
    return EXIT_OK


def cmd_doppler(args):
    frames = io.read_detections(args.detections)
    ex = io.read_calibration(args.calib)[0] if args.calib else None
    if ex is None:
        ex = Extrinsics()
    gt = io.read_gt(args.gt) if args.gt else None
    meas = []
    for t, dets in frames:
        try:
            if args.no_ransac:
                fit = ls_velocity(dets)
            else:
                fit = ransac_velocity(dets, iters=args.iters, threshold=args.threshold, seed=args.seed)
        except (NoConsensus, RankDeficient, TooFew) as e:
            log.warning("t=%.3f: skipped frame (%s)", t, e)
            continue
        att = IDENTITY_QUAT
        if gt is not None:
            k = align([t], gt[0])[0]
            att = gt[1][k] / np.linalg.norm(gt[1][k])
        meas.append(to_measurement(fit, t, ex, att))
    io.write_radar(args.out, meas)
    log.info("wrote %d velocity measurements from %d frames", len(meas), len(frames))
    return EXIT_OK


def _load_params(path):
    if not path:
        return RadarParams()
    try:
        return RadarParams.from_json(json.loads(Path(path).read_text()))
    except (OSError, ValueError, TypeError) as e:
        raise InputError("bad radar params %s: %s" % (path, e)) from None


def cmd_cube(args):
    if args.action == "synthesize":
        params = _load_params(args.params)
        rng = np.random.default_rng(args.seed)
        if args.targets:
            entries = json.loads(Path(args.targets).read_text())
            targets = [PointTarget(**t) for t in entries]
        else:
            targets = []
            for _ in range(args.n_targets):
                i_r = int(rng.integers(1, params.n_samples))
                i_d = int(rng.integers(1, params.n_chirps))
                i_a = int(rng.integers(1, params.n_angle_bins))
                targets.append(on_grid_target(i_r, i_d, i_a, params))
        adc = synthesize_adc(params, targets, noise_sigma=args.noise, seed=args.seed)
        write_rdc1(args.output, adc.data, DOMAIN_ADC, params)
        return EXIT_OK
    data, domain, params = read_rdc1(args.input)
    if params is None:
        params = _load_params(args.params)
    if args.action == "process":
        if domain != DOMAIN_ADC:
            raise InputError("process expects an ADC-domain cube")
        cube = process_cube(AdcCube(data, params))
        write_rdc1(args.output, cube.data, DOMAIN_PROCESSED, params)
        return EXIT_OK
    # detect
    if domain != DOMAIN_PROCESSED:
        raise InputError("detect expects a processed cube")
    dets = extract_detections(RadarCube(data, params), args.threshold_db)
    result = {"n_detections": len(dets)}
    if args.output:
        io.write_detections(args.output, [(0.0, dets)])
    if len(dets) >= 2:
        fit = ls_velocity(dets, planar=True)
        result["velocity_xy"] = [float(fit.v[0]), float(fit.v[1])]
    print(json.dumps(result))
    return EXIT_OK


def cmd_eval(args):
    est = io.read_estimates(args.est)
    gt_t, _, gt_v = io.read_gt(args.gt)
    m = compute_metrics(est["t"], est["v"], gt_t, gt_v)
    out = m.as_dict()
    text = json.dumps(out)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    print(m.table_row(), file=sys.stderr)
    if args.dump:
        idx = align(est["t"], gt_t)
        rows = np.column_stack([est["t"], est["v"], gt_v[idx], est["v"] - gt_v[idx]])
        header = "t,vx,vy,vz,gt_vx,gt_vy,gt_vz,ex,ey,ez"
        np.savetxt(args.dump, rows, delimiter=",", header=header, comments="", fmt="%.17g")
    return EXIT_OK


def cmd_mc(args):
    sc = load_scenario(args.scenario)
    cfg, _ = load_filter_config(args.config)
    if args.use_sigma:
        cfg = replace(cfg, use_predicted_sigma=True)
    threads = args.threads or thread_count(1)
    stats, _ = monte_carlo(sc, cfg, args.runs, seed0=args.seed0, threads=threads)
    text = json.dumps(stats.as_dict())
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="egofuse", description="Radar-inertial ego-velocity toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim", help="simulate a scenario to CSV files")
    s.add_argument("--scenario", help="scenario TOML (default scenario if omitted)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_sim)

    s = sub.add_parser("fuse", help="run the EKF over IMU + velocity measurements")
    s.add_argument("--imu", required=True)
    s.add_argument("--radar", required=True)
    s.add_argument("--calib")
    s.add_argument("--config", help="filter config TOML")
    s.add_argument("--out", required=True)
    s.add_argument("--use-sigma", action="store_true",
                   help="weight updates by the reported covariance instead of the fixed R")
    s.add_argument("--init-from", help="initialize attitude/velocity from this gt.csv")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("doppler", help="RANSAC/LS ego-velocity from detections")
    s.add_argument("--detections", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--calib")
    s.add_argument("--gt", help="gt.csv supplying attitude for the world-frame rotation")
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--threshold", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-ransac", action="store_true")
    s.set_defaults(func=cmd_doppler)

    s = sub.add_parser("cube", help="RDC1 radar cube tools")
    s.add_argument("action", choices=["synthesize", "process", "detect"])
    s.add_argument("--input")
    s.add_argument("--output")
    s.add_argument("--params", help="RadarParams JSON")
    s.add_argument("--targets", help="JSON list of PointTarget fields")
    s.add_argument("--n-targets", type=int, default=1)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold-db", type=float, default=12.0)
    s.set_defaults(func=cmd_cube)

    s = sub.add_parser("eval", help="velocity metrics of estimates against ground truth")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", help="metrics JSON path")
    s.add_argument("--dump", help="per-sample CSV path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("mc", help="Monte-Carlo consistency statistics")
    s.add_argument("--scenario")
    s.add_argument("--config")
    s.add_argument("--runs", type=int, default=50)
    s.add_argument("--seed0", type=int, default=0)
    s.add_argument("--threads", type=int)
    s.add_argument("--use-sigma", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_mc)
    return p


def _check_cube_args(args):
    need = {"synthesize": ["output"], "process": ["input", "output"], "detect": ["input"]}
    missing = [a for a in need[args.action] if not getattr(args, a)]
    if missing:
        raise InputError("cube %s requires --%s" % (args.action, " --".join(missing)))


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "cube":
            _check_cube_args(args)
        return args.func(args)
    except InputError as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_INPUT
    except (FileNotFoundError, json.JSONDecodeError) as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as e:
        print("numerical failure: %s" % e, file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
