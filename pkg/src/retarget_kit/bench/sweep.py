"""Shift×Lag sweeps over a worker pool.

Per-trial seeds come from a stable hash so a record depends only on
(master seed, task, mode, shift index, lag index, seed index) and never on
scheduling: the first 8 bytes of BLAKE2b over ``"master|task|mode|ri|li|si"``,
read big-endian and masked to 63 bits.
"""

from __future__ import annotations

import hashlib
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from ..config import FULL_LAGS_MS, FULL_SHIFTS_M, Config
from .trial import TrialRecord, TrialSpec, run_trial


@dataclass(frozen=True)
class Grid:
    shifts: tuple[float, ...]
    lags_ms: tuple[int, ...]

    def __post_init__(self):
        if not self.shifts or not self.lags_ms:
            raise ValueError("grid needs at least one shift and one lag")

    @property
    def cells(self) -> int:
        return len(self.shifts) * len(self.lags_ms)


FULL_GRID = Grid(FULL_SHIFTS_M, FULL_LAGS_MS)
DESK_GRID = Grid((0.0, 0.06, 0.10), (0, 200, 400))


def trial_seed(master: int, task: str, mode: str, r_index: int, l_index: int, seed_index: int) -> int:
    key = f"{master}|{task}|{mode}|{r_index}|{l_index}|{seed_index}".encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") & ((1 << 63) - 1)


def sweep_specs(tasks, modes, grid: Grid, seeds: int, master_seed: int = 0) -> list[TrialSpec]:
    specs = []
    for task in tasks:
        for mode in modes:
            for ri, r in enumerate(grid.shifts):
                for li, lag in enumerate(grid.lags_ms):
                    for si in range(seeds):
                        specs.append(TrialSpec(task, mode, float(r), int(lag),
                                               trial_seed(master_seed, task, mode, ri, li, si), si))
    return specs


def safe_run(spec: TrialSpec, cfg: Config) -> TrialRecord:
    """Run one trial; an exception becomes an errored, aborted record."""
    try:
        return run_trial(spec, cfg)
    except Exception as exc:  # noqa: BLE001 - a single bad trial must not kill the sweep
        last = traceback.extract_tb(exc.__traceback__)[-1]
        return TrialRecord(spec, abort=True, abort_reason="error",
                           error=f"{type(exc).__name__}: {exc} ({last.name}:{last.lineno})")


def _run_star(args):
    return safe_run(*args)


def run_records(specs, cfg: Config | None = None, parallelism: int = 1) -> list[TrialRecord]:
    cfg = cfg or Config()
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    if parallelism == 1 or len(specs) <= 1:
        records = [safe_run(s, cfg) for s in specs]
    else:
        chunk = max(1, len(specs) // (4 * parallelism))
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(_run_star, [(s, cfg) for s in specs], chunksize=chunk))
    return sorted(records, key=lambda rec: rec.spec.key())


def run_sweep(tasks, modes, grid: Grid = DESK_GRID, seeds: int = 20, master_seed: int = 0,
              parallelism: int = 1, cfg: Config | None = None) -> list[TrialRecord]:
    if isinstance(tasks, str):
        tasks = [tasks]
    if isinstance(modes, str):
        modes = [modes]
    if seeds < 1:
        raise ValueError("seeds must be at least 1")
    return run_records(sweep_specs(tasks, modes, grid, seeds, master_seed), cfg, parallelism)
