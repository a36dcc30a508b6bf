"""Deterministic file formats: CSV with a provenance comment, JSON, NDJSON."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .continuation import ContinuationRun, NewtonSettings, PolarField, StepStats
from .lattice import DomainError, WedgeTruncation
from .model import LambdaOmegaModel
from .phase import PhaseField


def provenance(digest: str) -> str:
    return f"# rotwave {__version__} config={digest}"


def _num(x) -> str:
    return repr(float(x))


def _clean(obj):
    """Make an object JSON-safe: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(path: Path, payload: dict, digest: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"meta": {"tool": "rotwave", "version": __version__, "config": digest}, **payload}
    path.write_text(json.dumps(_clean(body), indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def write_csv(path: Path, header: list[str], rows, digest: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(provenance(digest) + "\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([v if isinstance(v, (int, str)) else _num(v) for v in row])


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_phase_csv(path: Path, field: PhaseField, digest: str) -> None:
    rows = ((s.i, s.j, t) for s, t in zip(field.wedge.sites, field.theta))
    write_csv(path, ["i", "j", "theta"], rows, digest)


def read_phase_csv(path: Path, wedge: WedgeTruncation) -> PhaseField:
    header, rows = read_csv(path)
    if header != ["i", "j", "theta"]:
        raise DomainError(f"{path} is not a phase file")
    theta = np.empty(wedge.size)
    seen = set()
    for i, j, t in rows:
        k = wedge.site_index((int(i), int(j)))
        theta[k] = float(t)
        seen.add(k)
    if len(seen) != wedge.size:
        raise DomainError(f"{path} does not cover the wedge with N={wedge.N}")
    return PhaseField(wedge, theta)


def write_polar_csv(path: Path, x: PolarField, digest: str) -> None:
    rows = ((s.i, s.j, r, t) for s, r, t in zip(x.wedge.sites, x.r, x.theta))
    write_csv(path, ["i", "j", "r", "theta"], rows, digest)


def read_polar_csv(path: Path, wedge: WedgeTruncation, freq_shift: float = 0.0) -> PolarField:
    header, rows = read_csv(path)
    if header != ["i", "j", "r", "theta"]:
        raise DomainError(f"{path} is not a polar-field file")
    r = np.empty(wedge.size)
    theta = np.empty(wedge.size)
    for i, j, rv, tv in rows:
        k = wedge.site_index((int(i), int(j)))
        r[k], theta[k] = float(rv), float(tv)
    return PolarField(wedge, r, theta, freq_shift)


def solution_name(alpha: float) -> str:
    return f"alpha_{alpha:.6f}.csv"


def save_run(run: ContinuationRun, directory: Path, digest: str) -> None:
    directory = Path(directory)
    sol_dir = directory / "solutions"
    sol_dir.mkdir(parents=True, exist_ok=True)
    write_phase_csv(directory / "theta_bar.csv", run.theta_bar, digest)
    for st, x in zip(run.stats, run.solutions):
        write_polar_csv(sol_dir / solution_name(st.alpha), x, digest)
    write_json(
        directory / "run.json",
        {
            "N": run.theta_bar.wedge.N,
            "model": run.model.to_json(),
            "alpha_grid": run.alpha_grid,
            "completed": run.completed,
            "max_alpha": run.max_alpha,
            "failure": run.failure,
            "steps": [dict(st.to_json(), file=f"solutions/{solution_name(st.alpha)}") for st in run.stats],
        },
        digest,
    )


def load_run(directory: Path, wedge: WedgeTruncation, model: LambdaOmegaModel, settings: NewtonSettings) -> ContinuationRun:
    directory = Path(directory)
    meta = read_json(directory / "run.json")
    if meta["N"] != wedge.N:
        raise DomainError(f"saved run has N={meta['N']}, config has N={wedge.N}")
    theta_bar = read_phase_csv(directory / "theta_bar.csv", wedge)
    run = ContinuationRun(np.asarray(meta["alpha_grid"], dtype=float), theta_bar, model, settings)
    for st in meta["steps"]:
        run.solutions.append(read_polar_csv(directory / st["file"], wedge, st["freq_shift"]))
        run.stats.append(StepStats(**{k: st[k] for k in StepStats.__dataclass_fields__}))
    run.failure = meta.get("failure")
    return run


def write_trace(path: Path, trace, meta: dict, digest: str) -> None:
    """One JSON record per stored time; run metadata goes to ``<name>.json`` beside it."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for t, z, d in zip(trace.times, trace.states, trace.defects):
            flat = z.ravel()
            rec = {"t": float(t), "re": flat.real.tolist(), "im": flat.imag.tolist(), "quarter_turn_defect": float(d)}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    write_json(
        path.with_suffix(".json"),
        dict(
            meta,
            L=trace.L,
            dt=trace.dt,
            method=trace.method,
            alpha=trace.alpha,
            stored=int(trace.times.size),
            completed=trace.completed,
            layout="row-major over (i, j), i and j from 1-L to L",
        ),
        digest,
    )


def read_trace(path: Path):
    from .rotating import SimulationTrace

    meta = read_json(Path(path).with_suffix(".json"))
    L = int(meta["L"])
    times, states, defects = [], [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            times.append(rec["t"])
            states.append((np.array(rec["re"]) + 1j * np.array(rec["im"])).reshape(2 * L, 2 * L))
            defects.append(rec["quarter_turn_defect"])
    return (
        SimulationTrace(L, np.array(times), np.array(states), float(meta["dt"]), meta["method"], np.array(defects), float(meta["alpha"]), bool(meta["completed"])),
        meta,
    )
