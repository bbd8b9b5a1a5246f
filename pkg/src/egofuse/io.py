"""CSV / JSON / TOML readers and writers for the toolkit's file formats.

Floats are written with 17 significant digits so timestamps round-trip
exactly (evaluation matches samples by exact timestamp).
"""
import csv
import json
from itertools import groupby
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .doppler import RadarDetection, normalize_direction
from .errors import InputError
from .fusion import Extrinsics, FilterConfig, VelocityMeasurement
from .inertial import ImuNoiseParams, ImuSample, NominalState

IMU_HEADER = ["t", "gx", "gy", "gz", "ax", "ay", "az"]
RADAR_HEADER = ["t", "vx", "vy", "vz", "s11", "s12", "s13", "s22", "s23", "s33"]
GT_HEADER = ["t", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]
DET_HEADER = ["t", "dx", "dy", "dz", "vr"]
EST_HEADER = (["t", "qw", "qx", "qy", "qz", "vx", "vy", "vz",
               "bgx", "bgy", "bgz", "bax", "bay", "baz"]
              + ["p%d%d" % (i, i) for i in range(1, 13)])

_UPPER = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _fmt(x):
    return "%.17g" % x


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _read(path, header):
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            got = next(r, None)
            if got is None or [h.strip() for h in got] != header:
                raise InputError("%s: expected header %s, got %s" % (path, ",".join(header), got))
            rows = [[float(x) for x in row] for row in r if row]
    except OSError as e:
        raise InputError("cannot read %s: %s" % (path, e)) from None
    except ValueError as e:
        if isinstance(e, InputError):
            raise
        raise InputError("%s: malformed number (%s)" % (path, e)) from None
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise InputError("%s: line %d has %d fields, expected %d" % (path, i + 2, len(row), len(header)))
        if not all(np.isfinite(row)):
            raise InputError("%s: line %d contains non-finite values" % (path, i + 2))
    return rows


def write_imu(path, samples):
    _write(path, IMU_HEADER, ([u.t, *u.gyro, *u.accel] for u in samples))


def read_imu(path):
    return [ImuSample(t=r[0], gyro=r[1:4], accel=r[4:7]) for r in _read(path, IMU_HEADER)]


def write_radar(path, meas):
    _write(path, RADAR_HEADER,
           ([m.t, *m.v_m, *(m.sigma_m[i, j] for i, j in _UPPER)] for m in meas))


def read_radar(path):
    out = []
    for r in _read(path, RADAR_HEADER):
        S = np.zeros((3, 3))
        for (i, j), x in zip(_UPPER, r[4:]):
            S[i, j] = S[j, i] = x
        out.append(VelocityMeasurement(t=r[0], v_m=r[1:4], sigma_m=S))
    return out


def write_gt(path, truth):
    _write(path, GT_HEADER, ([g.t, *g.q, *g.v] for g in truth))


def read_gt(path):
    """Ground truth as arrays ``(t, q, v)``."""
    rows = np.array(_read(path, GT_HEADER), dtype=float).reshape(-1, 8)
    return rows[:, 0], rows[:, 1:5], rows[:, 5:8]


def write_detections(path, frames):
    _write(path, DET_HEADER, ([t, *d.dir, d.v_r] for t, dets in frames for d in dets))


def read_detections(path):
    """Detections grouped by timestamp: list of ``(t, [RadarDetection])``."""
    rows = _read(path, DET_HEADER)
    frames = []
    for t, grp in groupby(rows, key=lambda r: r[0]):
        dets = [RadarDetection(dir=normalize_direction(r[1:4], t), v_r=r[4]) for r in grp]
        frames.append((t, dets))
    return frames


def write_estimates(path, records):
    _write(path, EST_HEADER,
           ([r.t, *r.state.q, *r.state.v, *r.state.bg, *r.state.ba, *np.diag(r.P)] for r in records))


def read_estimates(path):
    """Estimates as a dict of arrays: t, q, v, bg, ba, P_diag."""
    a = np.array(_read(path, EST_HEADER), dtype=float).reshape(-1, len(EST_HEADER))
    return {"t": a[:, 0], "q": a[:, 1:5], "v": a[:, 5:8], "bg": a[:, 8:11],
            "ba": a[:, 11:14], "P_diag": a[:, 14:26]}


def read_calibration(path):
    """``(Extrinsics, gravity)`` from the calibration JSON."""
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        ex = Extrinsics(lever_arm=d.get("lever_arm", [0, 0, 0]), q_RI=d.get("q_RI", [1, 0, 0, 0]))
        return ex, float(d.get("gravity", 9.80665))
    except (OSError, ValueError, TypeError) as e:
        raise InputError("bad calibration file %s: %s" % (path, e)) from None


def write_calibration(path, ex, gravity=9.80665):
    Path(path).write_text(json.dumps({"lever_arm": list(map(float, ex.lever_arm)),
                                      "q_RI": list(map(float, ex.q_RI)),
                                      "gravity": gravity}, indent=2))


def load_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise InputError("cannot load %s: %s" % (path, e)) from None


def filter_config_from_dict(d):
    """Build ``(FilterConfig, initial NominalState or None)`` from a parsed config.

    Recognized keys: ``p0_sigma`` (four stds: attitude rad, velocity m/s,
    gyro bias rad/s, accel bias m/s^2), ``noise`` table, ``r_floor``,
    ``gate_chi2``, ``use_predicted_sigma``, ``r_fixed_sigma`` (m/s per axis)
    and an optional ``init`` table with ``q``, ``v``, ``bg``, ``ba``.
    """
    d = dict(d)
    kw = {}
    try:
        if "p0_sigma" in d:
            s = np.asarray(d.pop("p0_sigma"), dtype=float)
            kw["P0"] = np.diag(np.repeat(s ** 2, 3)) if s.size == 4 else np.diag(s ** 2)
        if "noise" in d:
            kw["noise"] = ImuNoiseParams(**d.pop("noise"))
        if "r_fixed_sigma" in d:
            rs = np.asarray(d.pop("r_fixed_sigma"), dtype=float) * np.ones(3)
            kw["r_fixed"] = np.diag(rs ** 2)
        for k in ("r_floor", "gate_chi2"):
            if k in d:
                kw[k] = float(d.pop(k))
        if "use_predicted_sigma" in d:
            kw["use_predicted_sigma"] = bool(d.pop("use_predicted_sigma"))
        init = d.pop("init", None)
        x0 = NominalState(**init) if init else None
        if d:
            raise InputError("unknown filter config keys: %s" % sorted(d))
        return FilterConfig(**kw), x0
    except (TypeError, ValueError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError("bad filter config: %s" % e) from None
