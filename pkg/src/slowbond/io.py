"""Text formats for solutions, tables, profiles, trajectories and reports.

Every file starts with comment lines (``# ...``); the first one is the
format tag ``# slowbond-v1`` and the others are ``key=value`` metadata.
Floats are written with ``repr`` so that reading a file back gives the
same doubles bit for bit.

Trajectory dumps hold one tab-separated line per snapshot::

    replica<TAB>t<TAB>rle

where ``rle`` lists the occupations of sites ``1..N`` as the first value
followed by the run lengths, e.g. ``1:3,5,2`` for ``1110000011``.
"""

from __future__ import annotations

import csv
import io as _io
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .diagnostics import DiagnosticRecord
from .errors import DomainError
from .lattice import Configuration
from .pde import PdeSolution

FORMAT = "slowbond-v1"


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def header_lines(meta: dict) -> list:
    out = [f"# {FORMAT}"]
    for k, v in meta.items():
        if isinstance(v, (list, tuple)):
            v = ";".join(_fmt(x) for x in v)
        out.append(f"# {k}={_fmt(v)}")
    return out


def read_header(lines: Sequence[str]) -> tuple:
    """Split ``lines`` into ``(metadata, body lines)``; checks the format tag."""
    if not lines or lines[0].strip() != f"# {FORMAT}":
        raise DomainError(f"missing '# {FORMAT}' header")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, val = lines[i][1:].strip().partition("=")
        meta[key] = val
        i += 1
    return meta, lines[i:]


def _write(path, text: str):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _read_lines(path) -> list:
    try:
        with open(path) as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence], meta: dict = None):
    buf = _io.StringIO()
    buf.write("\n".join(header_lines(meta or {})) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return _write(path, buf.getvalue())


def read_table(path) -> tuple:
    """Returns ``(metadata, columns, rows)`` with every cell as a string."""
    meta, body = read_header(_read_lines(path))
    rows = list(csv.reader(body))
    if not rows:
        raise DomainError(f"{path}: table has no column header")
    return meta, rows[0], rows[1:]


def write_solution(sol: PdeSolution, path, meta: dict = None):
    """One row per stored time: ``t`` then the ``M`` cell values."""
    head = {"regime": sol.regime, "M": sol.M, "dt": sol.dt, "slow_points": list(sol.slow_points),
            "slow_face": sol.slow_face}
    head.update(meta or {})
    cols = ["t"] + [f"c{j}" for j in range(sol.M)]
    rows = ([t] + list(v) for t, v in zip(sol.times, sol.values))
    return write_table(path, cols, rows, head)


def read_solution(path) -> PdeSolution:
    from .pde import slow_face_indices

    meta, cols, rows = read_table(path)
    try:
        M = int(meta["M"])
        pts = tuple(float(x) for x in meta["slow_points"].split(";") if x)
        data = np.array([[float(x) for x in r] for r in rows])
        regime = meta["regime"]
        dt = float(meta["dt"])
    except (KeyError, ValueError) as exc:
        raise DomainError(f"{path}: malformed solution file ({exc})") from exc
    if data.ndim != 2 or data.shape[1] != M + 1:
        raise DomainError(f"{path}: expected {M + 1} columns")
    faces = slow_face_indices(M, pts) if regime != "heat_periodic" else ()
    return PdeSolution(regime, M, dt, pts, data[:, 0].copy(), data[:, 1:].copy(),
                       meta.get("slow_face", "consistent"), faces)


def write_profile(path, u: np.ndarray, values: np.ndarray, meta: dict = None):
    return write_table(path, ["u", "value"], zip(u, values), meta)


def read_profile(path) -> tuple:
    meta, _, rows = read_table(path)
    arr = np.array([[float(x) for x in r] for r in rows])
    return meta, arr[:, 0], arr[:, 1]


def encode_rle(config: Configuration) -> str:
    s = np.roll(config.occupancy, -1)
    change = np.flatnonzero(np.diff(s)) + 1
    bounds = np.concatenate([[0], change, [s.size]])
    return f"{int(s[0])}:" + ",".join(str(int(n)) for n in np.diff(bounds))


def decode_rle(text: str) -> Configuration:
    try:
        first, _, runs = text.partition(":")
        v = int(first)
        lengths = [int(n) for n in runs.split(",")]
    except ValueError as exc:
        raise DomainError(f"bad run-length record {text!r}") from exc
    if v not in (0, 1) or any(n <= 0 for n in lengths):
        raise DomainError(f"bad run-length record {text!r}")
    parts = [np.full(n, (v + i) % 2, dtype=np.uint8) for i, n in enumerate(lengths)]
    return Configuration(np.roll(np.concatenate(parts), 1))


class TrajectoryWriter:
    """Appends snapshot records to a trajectory dump."""

    def __init__(self, path, meta: dict = None):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fh = open(self.path, "w")
        except OSError as exc:
            raise OSError(f"cannot write {self.path}: {exc.strerror or exc}") from exc
        self._fh.write("\n".join(header_lines(meta or {})) + "\n")

    def add(self, replica: int, series):
        for t, occ in zip(series.times, series.configs):
            self._fh.write(f"{replica}\t{_fmt(float(t))}\t{encode_rle(Configuration(occ))}\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trajectories(path) -> tuple:
    """Returns ``(metadata, [(replica, t, Configuration), ...])``."""
    meta, body = read_header(_read_lines(path))
    out = []
    for line in body:
        if not line.strip():
            continue
        r, t, rle = line.split("\t")
        out.append((int(r), float(t), decode_rle(rle)))
    return meta, out


REPORT_COLUMNS = ["name", "params", "value", "stderr", "bound", "status"]


def format_params(params: dict) -> str:
    return ";".join(f"{k}={_fmt(v)}" for k, v in params.items())


def write_report(path, records: Iterable[DiagnosticRecord], meta: dict = None):
    rows = ([r.name, format_params(r.params), r.value, r.stderr, r.bound, r.status] for r in records)
    return write_table(path, REPORT_COLUMNS, rows, meta)


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {p}: {exc.strerror or exc}") from exc
    if not os.access(p, os.W_OK):
        raise OSError(f"output directory {p} is not writable")
    return p
