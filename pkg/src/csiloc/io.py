"""File formats: CSI traces (CSV and a compact binary twin), RSS trajectory
CSV, trajectory/CDF CSV outputs."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .chansim import ChannelEnv, CsiTrace
from .fpextract import RssSample, RssTrajectory

_CSI_MAGIC = b"CSIB"


def write_csi_csv(path, trace: CsiTrace) -> None:
    """Header row (carrier_freq, n_subcarriers, count) then
    `timestamp, re_1, im_1, ..., re_L, im_L` per frame."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# carrier_freq={trace.env.carrier_freq}, "
                 f"n_subcarriers={trace.env.n_subcarriers}, count={len(trace)}\n")
        cols = ["timestamp"]
        for i in range(trace.env.n_subcarriers):
            cols += [f"re_{i + 1}", f"im_{i + 1}"]
        fh.write(",".join(cols) + "\n")
        for t, frame in zip(trace.timestamps, trace.frames):
            row = [f"{t:.9f}"]
            for h in frame:
                row += [f"{h.real:.9e}", f"{h.imag:.9e}"]
            fh.write(",".join(row) + "\n")


def read_csi_csv(path) -> CsiTrace:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().lstrip("# ")
        meta = dict(kv.split("=") for kv in header.replace(" ", "").split(","))
        fh.readline()   # column names
        rows = [line.strip().split(",") for line in fh if line.strip()]
    carrier = float(meta["carrier_freq"])
    n_sub = int(meta["n_subcarriers"])
    ts = np.array([float(r[0]) for r in rows])
    frames = np.empty((len(rows), n_sub), dtype=complex)
    for k, r in enumerate(rows):
        vals = np.array([float(x) for x in r[1:]])
        frames[k] = vals[0::2] + 1j * vals[1::2]
    env = ChannelEnv(carrier_freq=carrier, n_subcarriers=n_sub)
    return CsiTrace(ts, frames, env)


def write_csi_bin(path, trace: CsiTrace) -> None:
    """Binary twin with identical field order: magic, carrier_freq f8,
    n_subcarriers u4, count u8, then per frame f8 timestamp + interleaved
    f8 re/im pairs."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_CSI_MAGIC)
        fh.write(struct.pack("<dIQ", trace.env.carrier_freq,
                             trace.env.n_subcarriers, len(trace)))
        inter = np.empty((len(trace), 1 + 2 * trace.env.n_subcarriers))
        inter[:, 0] = trace.timestamps
        inter[:, 1::2] = trace.frames.real
        inter[:, 2::2] = trace.frames.imag
        fh.write(inter.astype("<f8").tobytes())


def read_csi_bin(path) -> CsiTrace:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _CSI_MAGIC:
        raise ValueError("not a CSI binary file")
    carrier, n_sub, count = struct.unpack("<dIQ", raw[4:4 + 20])
    data = np.frombuffer(raw[24:], dtype="<f8").reshape(count, 1 + 2 * n_sub)
    ts = data[:, 0].copy()
    frames = data[:, 1::2] + 1j * data[:, 2::2]
    env = ChannelEnv(carrier_freq=carrier, n_subcarriers=int(n_sub))
    return CsiTrace(ts, frames, env)


def write_rss_csv(path, traj: RssTrajectory) -> None:
    """Rows `timestamp, ap_id:rss, ...` with unheard APs omitted."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# walk_id={traj.walk_id}\n")
        for s in traj.samples:
            parts = [f"{s.timestamp:.6f}"]
            parts += [f"{ap}:{v:.3f}" for ap, v in sorted(s.rss.items())]
            fh.write(",".join(parts) + "\n")


def read_rss_csv(path) -> RssTrajectory:
    path = Path(path)
    samples = []
    walk_id = path.stem
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "walk_id=" in line:
                    walk_id = line.split("walk_id=")[1].strip()
                continue
            parts = line.split(",")
            rss = {}
            for kv in parts[1:]:
                ap, v = kv.split(":")
                rss[ap] = float(v)
            samples.append(RssSample(float(parts[0]), rss))
    return RssTrajectory(samples, walk_id=walk_id)


def write_trajectory_csv(path, times: Sequence[float], points: np.ndarray,
                         confidence: Sequence[float]) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("t_s,x_m,y_m,confidence\n")
        for t, (x, y), c in zip(times, points, confidence):
            fh.write(f"{t:.3f},{x:.3f},{y:.3f},{c:.4f}\n")


def write_cdf_csv(path, errors: Sequence[float], unit: str = "m") -> None:
    path = Path(path)
    err = np.sort(np.asarray(errors, dtype=float))
    with path.open("w") as fh:
        fh.write(f"error_{unit},cdf\n")
        for k, e in enumerate(err):
            fh.write(f"{e:.4f},{(k + 1) / len(err):.4f}\n")


def write_rows_csv(path, header: List[str], rows: List[Sequence]) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")
