"""Monte Carlo over initial Bohmian positions: collapse statistics,
Born-rule frequencies, and no-signaling averages.

Runs are independent work items with per-run seeds derived from
(base_seed, run_index); aggregation is index-ordered, so results do not
depend on completion order.  Worker count comes from the
GRAVCOLLAPSE_WORKERS environment variable (default serial).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ModelParams
from .grid import BohmianConfiguration, WaveFunction
from .hamiltonian import InternalPotentialSpec
from .observables import BranchRegionSpec, branch_weights, reduced_density_matrix
from .propagator import IntegrationError, Propagator, PropagatorState


class EnsembleError(RuntimeError):
    """Raised when too many runs fail to integrate."""


@dataclass
class EnsembleSpec:
    n_runs: int
    base_seed: int = 0
    collapse_threshold: float = 1e-3  # branch declared collapsed at weight 1 - eta
    t_max: float | None = None        # defaults to params.t_max

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not (0.0 < self.collapse_threshold < 0.5):
            raise ValueError("collapse_threshold must lie in (0, 0.5)")


@dataclass
class RunOutcome:
    run_index: int
    outcome: str | None = None
    collapse_time: float | None = None
    collapse_step: int | None = None
    final_weights: dict = field(default_factory=dict)
    stalled_steps: int = 0
    error: str | None = None
    extras: dict = field(default_factory=dict)


@dataclass
class EnsembleResult:
    outcomes: list[RunOutcome]
    labels: list[str]

    @property
    def n_runs(self) -> int:
        return len(self.outcomes)

    @property
    def resolved(self) -> list[RunOutcome]:
        return [o for o in self.outcomes if o.outcome is not None and o.error is None]

    @property
    def failed(self) -> int:
        return sum(1 for o in self.outcomes if o.error is not None)

    def frequencies(self) -> dict[str, float]:
        """Outcome fractions over all runs (unresolved runs leave mass unassigned)."""
        n = self.n_runs
        return {lab: sum(1 for o in self.resolved if o.outcome == lab) / n
                for lab in self.labels}

    def frequency_interval(self, label: str, z: float = 3.0) -> tuple[float, float, float]:
        """(frequency, lo, hi) with a +-z-sigma normal binomial interval."""
        n = self.n_runs
        f = self.frequencies()[label]
        se = np.sqrt(max(f * (1.0 - f), 1.0 / n) / n)
        return f, max(0.0, f - z * se), min(1.0, f + z * se)

    def median_collapse_time(self) -> float | None:
        times = [o.collapse_time for o in self.resolved if o.collapse_time is not None]
        return float(np.median(times)) if times else None

    def summary(self) -> dict:
        out = {
            "n_runs": self.n_runs,
            "resolved": len(self.resolved),
            "failed": self.failed,
            "frequencies": self.frequencies(),
            "median_collapse_time": self.median_collapse_time(),
        }
        intervals = {}
        for lab in self.labels:
            f, lo, hi = self.frequency_interval(lab)
            intervals[lab] = {"freq": f, "lo_3sigma": lo, "hi_3sigma": hi}
        out["frequency_intervals"] = intervals
        return out


def sample_initial_positions(psi0: WaveFunction, n_runs: int, seed) -> list[BohmianConfiguration]:
    """Quantum-equilibrium samples: q0 ~ |psi0|^2 over configuration space.

    Inverse-CDF over the flattened grid plus uniform jitter within a cell.
    `seed` may be an int, SeedSequence, or Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    coords = sample_position_array(psi0, n_runs, rng)
    return [BohmianConfiguration.from_flat(c, psi0.axis_to_particle) for c in coords]


def sample_position_array(psi0: WaveFunction, n_runs: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Vectorized form of sample_initial_positions: array (n_runs, D) of flat coords."""
    grid = psi0.grid
    prob = (np.abs(psi0.amplitudes) ** 2).ravel()
    prob = prob / prob.sum()
    cdf = np.cumsum(prob)
    cdf[-1] = 1.0
    u = rng.random(n_runs)
    flat_idx = np.searchsorted(cdf, u, side="left")
    multi = np.unravel_index(flat_idx, grid.shape)
    out = np.empty((n_runs, grid.dims))
    for ax in range(grid.dims):
        dx = grid.spacings[ax]
        centers = grid.axis_coords(ax)[multi[ax]]
        out[:, ax] = centers + (rng.random(n_runs) - 0.5) * dx
    return out


# ---------------------------------------------------------------------------
# ensemble execution (picklable payload so workers can fan out)

@dataclass
class _RunPayload:
    psi0: WaveFunction
    params: ModelParams
    internal: InternalPotentialSpec
    regions: BranchRegionSpec
    spec: EnsembleSpec
    mode: str
    stop_at_collapse: bool
    record_rdm: tuple[int, int] | None  # (subsystem axis, bins)


def _run_seed(base_seed: int, run_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(base_seed, spawn_key=(run_index,)))


def _execute_run(payload: _RunPayload, run_index: int) -> RunOutcome:
    spec = payload.spec
    params = payload.params
    rng = _run_seed(spec.base_seed, run_index)
    q0 = sample_initial_positions(payload.psi0, 1, rng)[0]
    state = PropagatorState(payload.psi0.copy(), q0)
    prop = Propagator(params, payload.internal, mode=payload.mode)
    masks = payload.regions.masks(payload.psi0.grid)
    vol = payload.psi0.grid.cell_volume
    t_max = spec.t_max if spec.t_max is not None else params.t_max
    n_steps = int(round(t_max / params.dt))
    threshold = 1.0 - spec.collapse_threshold
    outcome = RunOutcome(run_index=run_index)

    def weights_of(psi):
        rho = np.abs(psi.amplitudes) ** 2 * vol
        return {lab: float(rho[m].sum()) for lab, m in masks.items()}

    try:
        for _ in range(n_steps):
            prop.step(state)
            if outcome.outcome is None:
                w = weights_of(state.psi)
                hit = [lab for lab, val in w.items() if val >= threshold]
                if hit:
                    outcome.outcome = hit[0]
                    outcome.collapse_time = state.t
                    outcome.collapse_step = state.step_count
                    if payload.stop_at_collapse:
                        break
    except IntegrationError as err:
        outcome.error = str(err)
        outcome.extras["diagnostics"] = err.diagnostics
        return outcome
    outcome.final_weights = weights_of(state.psi)
    outcome.stalled_steps = state.stalled_steps
    if payload.record_rdm is not None:
        axis, bins = payload.record_rdm
        rdm = reduced_density_matrix(state.psi, axis, bins)
        outcome.extras["rdm"] = rdm.matrix
        outcome.extras["purity"] = rdm.purity
    return outcome


_WORKER_PAYLOAD: _RunPayload | None = None


def _init_worker(payload: _RunPayload) -> None:
    global _WORKER_PAYLOAD
    _WORKER_PAYLOAD = payload


def _worker_run(run_index: int) -> RunOutcome:
    return _execute_run(_WORKER_PAYLOAD, run_index)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GRAVCOLLAPSE_WORKERS", "1")))
    except ValueError:
        return 1


def run_ensemble(spec: EnsembleSpec, psi0: WaveFunction, params: ModelParams,
                 internal: InternalPotentialSpec, regions: BranchRegionSpec,
                 mode: str = "normalized", stop_at_collapse: bool = True,
                 record_rdm: tuple[int, int] | None = None,
                 workers: int | None = None) -> EnsembleResult:
    """Sample q0 per run, propagate, and record first-crossing outcomes.

    A run resolves to the first labeled region whose weight reaches
    1 - collapse_threshold.  Per-run integration failures are recorded, not
    fatal, unless they exceed 1% of runs.
    """
    payload = _RunPayload(psi0, params, internal, regions, spec, mode,
                          stop_at_collapse, record_rdm)
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or spec.n_runs < 4:
        outcomes = [_execute_run(payload, i) for i in range(spec.n_runs)]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(payload,)) as pool:
            outcomes = list(pool.map(_worker_run, range(spec.n_runs), chunksize=8))
    result = EnsembleResult(outcomes, regions.labels())
    if result.failed > max(1, int(0.01 * spec.n_runs)):
        raise EnsembleError(f"{result.failed}/{spec.n_runs} runs failed to integrate")
    return result


def no_signaling_experiment(spec: EnsembleSpec, psi0: WaveFunction, params: ModelParams,
                            internal: InternalPotentialSpec, regions: BranchRegionSpec,
                            rdm_axis: int, rdm_bins: int,
                            mode: str = "normalized") -> tuple[np.ndarray, EnsembleResult]:
    """One experimental setting: full-horizon runs recording final reduced
    density matrices; returns (ensemble-averaged rho_A, per-run results).

    The caller encodes the remote setting (coupling on/off, shifted
    regions) in psi0/params before calling.
    """
    result = run_ensemble(spec, psi0, params, internal, regions, mode=mode,
                          stop_at_collapse=False, record_rdm=(rdm_axis, rdm_bins))
    mats = [o.extras["rdm"] for o in result.outcomes if "rdm" in o.extras]
    if not mats:
        raise EnsembleError("no run produced a reduced density matrix")
    return np.mean(mats, axis=0), result


def trace_distance(rho_a: np.ndarray, rho_b: np.ndarray) -> float:
    evals = np.linalg.eigvalsh(rho_a - rho_b)
    return 0.5 * float(np.sum(np.abs(evals)))


def bootstrap_distance(mats_a: list[np.ndarray], mats_b: list[np.ndarray],
                       n_boot: int = 400, seed: int = 0,
                       z: float = 2.576) -> dict:
    """Trace distance between two setting-averaged matrices with a bootstrap SE.

    The pass criterion is the normal-approximation interval d_hat +- z*SE
    reaching zero (the distance itself is non-negative by construction).
    """
    rng = np.random.default_rng(seed)
    a = np.asarray(mats_a)
    b = np.asarray(mats_b)
    d_hat = trace_distance(a.mean(axis=0), b.mean(axis=0))
    dists = np.empty(n_boot)
    for i in range(n_boot):
        ia = rng.integers(0, len(a), len(a))
        ib = rng.integers(0, len(b), len(b))
        dists[i] = trace_distance(a[ia].mean(axis=0), b[ib].mean(axis=0))
    se = float(dists.std(ddof=1))
    return {
        "distance": d_hat,
        "bootstrap_se": se,
        "ci_lo": d_hat - z * se,
        "ci_hi": d_hat + z * se,
        "contains_zero": bool(d_hat - z * se <= 0.0),
    }
