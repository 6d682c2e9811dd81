"""
Time-discrete quasi-static crack evolution.

At every step time t_i the crack K_i minimizes the total energy
E(g(t_i), K) over connected supersets K of K_{i-1}. The audits below
re-check the discrete energy estimates a correct run must satisfy.
"""

import math
import dataclasses
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from crack import CrackSet, connected_supersets, hausdorff_distance, is_continuum, is_subset
from domain import BoundaryPartition, Mesh
from errors import InvalidCrackError, InvalidLoadError, InvalidScheduleError, PreconditionError
from oracle import OracleResult, brute_force_min, verify_step_against_oracle
from solver import DisplacementField, Energies, LoadTrace, clear_split_cache, evaluate_crack, total_energy, work_rate

TIE_TOLERANCE = 1e-12
GREEDY_TOLERANCE = 1e-12
AUDIT_TOLERANCE = 1e-9
BALANCE_TOLERANCE = 1e-8
MONOTONE_TOLERANCE = 1e-8
STRATEGIES = ("brute", "greedy")


@dataclass(frozen=True)
class Schedule:
    """Uniform step times t_i = i * delta, i = 0..floor(1/delta)"""

    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.delta) and 0.0 < self.delta <= 1.0):
            raise InvalidScheduleError(f"time step must lie in (0, 1], got {self.delta}")

    @property
    def n_steps(self) -> int:
        return int(math.floor(1.0 / self.delta + 1e-9))

    @property
    def times(self) -> np.ndarray:
        return np.minimum(np.arange(self.n_steps + 1) * self.delta, 1.0)


@dataclass(frozen=True)
class MinimizerStrategy:
    """
    How a step searches the admissible family.

    brute: every connected superset with at most `budget` new edges.
    greedy: repeatedly move to the best superset with at most `depth` new
    edges; up to `patience` consecutive non-improving moves are tolerated
    and the best state seen is kept. With `compare`, every greedy step is
    also minimized by brute force within `budget` and both are recorded.
    """

    kind: str = "brute"
    budget: int = 1
    depth: int = 1
    patience: int = 0
    compare: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise InvalidScheduleError(f"unknown strategy '{self.kind}', expected one of {STRATEGIES}")
        if self.budget < 0:
            raise InvalidScheduleError(f"brute budget must be non-negative, got {self.budget}")
        if self.depth < 1:
            raise InvalidScheduleError(f"greedy depth must be at least 1, got {self.depth}")
        if self.patience < 0:
            raise InvalidScheduleError(f"greedy patience must be non-negative, got {self.patience}")
        if self.compare and self.kind != "greedy":
            raise InvalidScheduleError("brute-force comparison runs next to the greedy strategy only")

    @classmethod
    def brute(cls, budget: int) -> "MinimizerStrategy":
        return cls("brute", budget=budget)

    @classmethod
    def greedy(cls, depth: int = 1, patience: int = 0, compare_budget: Optional[int] = None) -> "MinimizerStrategy":
        if compare_budget is None:
            return cls("greedy", depth=depth, patience=patience)
        return cls("greedy", budget=compare_budget, depth=depth, patience=patience, compare=True)

    def describe(self) -> str:
        if self.kind == "brute":
            return f"brute(budget={self.budget})"
        described = f"greedy(depth={self.depth}, patience={self.patience})"
        return described + (f" vs brute(budget={self.budget})" if self.compare else "")


@dataclass(frozen=True, eq=False)
class CrackEvaluation:
    crack: CrackSet
    field: DisplacementField = field(repr=False)
    energies: Energies


@dataclass(frozen=True, eq=False)
class StepResult:
    crack: CrackSet
    energies: Energies
    field: DisplacementField = field(repr=False)
    n_candidates: int
    reference: Optional[OracleResult] = dataclasses.field(default=None, repr=False)

    @property
    def diverged(self) -> bool:
        """Brute force found another crack or another energy"""
        return self.reference is not None and not verify_step_against_oracle(self, self.reference)


@dataclass
class EvolutionRecord:
    """
    State after step i.

    work_increment is 2 (grad u_i | grad(g_{i+1} - g_i)); work_integral sums
    the increments of the steps before i; estimate_slack is the slack of the
    discrete energy estimate between step 0 and step i. brute_total and
    brute_crack hold the brute-force comparison of a greedy run.
    """

    step: int
    time: float
    crack: CrackSet
    bulk: float
    surface: float
    total: float
    grad_norm: float
    work_rate: float = 0.0
    work_increment: float = 0.0
    work_integral: float = 0.0
    estimate_slack: float = 0.0
    n_candidates: int = 0
    brute_total: Optional[float] = None
    brute_crack: Optional[CrackSet] = None
    diverged: bool = False
    field: Optional[DisplacementField] = field(default=None, repr=False)


@dataclass(frozen=True)
class Problem:
    mesh: Mesh
    partition: BoundaryPartition
    load: LoadTrace
    initial_crack: CrackSet


def evaluate_candidates(
    mesh: Mesh,
    bp: BoundaryPartition,
    g: np.ndarray,
    candidates: Sequence[CrackSet],
    n_jobs: int = 1,
    backend: str = "cg",
    guess: Optional[DisplacementField] = None,
) -> List[CrackEvaluation]:
    """Solve every candidate crack under the same load, optionally from a common starting field"""
    solved = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(evaluate_crack)(mesh, bp, g, crack, backend, guess) for crack in candidates
    )
    return [CrackEvaluation(crack, u, energies) for crack, (u, energies) in zip(candidates, solved)]


def select_minimizer(evaluations: Sequence[CrackEvaluation]) -> CrackEvaluation:
    """
    Minimal total energy; near-ties go to the smaller surface energy, then
    fewer edges, then the lexicographically smaller edge tuple.
    """
    if not evaluations:
        raise RuntimeError("admissible family is empty")
    best = min(ev.energies.total for ev in evaluations)
    cutoff = best + TIE_TOLERANCE * max(1.0, abs(best))
    tied = [ev for ev in evaluations if ev.energies.total <= cutoff]
    return min(tied, key=lambda ev: (ev.energies.surface, ev.crack.sort_key))


def _greedy_search(mesh, bp, previous, g, strategy, n_jobs, backend):
    current = evaluate_candidates(mesh, bp, g, [previous], n_jobs=1, backend=backend)[0]
    best, stale, evaluated = current, 0, 1
    while True:
        family = [k for k in connected_supersets(current.crack, mesh, strategy.depth) if k != current.crack]
        if not family:
            break
        evaluations = evaluate_candidates(mesh, bp, g, family, n_jobs=n_jobs, backend=backend, guess=current.field)
        evaluated += len(evaluations)
        candidate = select_minimizer(evaluations)
        if candidate.energies.total < best.energies.total - GREEDY_TOLERANCE:
            best = current = candidate
            stale = 0
        elif stale < strategy.patience:
            current = candidate
            stale += 1
        else:
            break
    return best, evaluated


def step(
    mesh: Mesh,
    bp: BoundaryPartition,
    previous: CrackSet,
    g: np.ndarray,
    strategy: MinimizerStrategy,
    n_jobs: int = 1,
    backend: str = "cg",
) -> StepResult:
    """One incremental minimization over connected supersets of `previous`"""
    clear_split_cache()
    if strategy.kind == "brute":
        family = connected_supersets(previous, mesh, strategy.budget)
        evaluations = evaluate_candidates(mesh, bp, g, family, n_jobs=n_jobs, backend=backend)
        best, evaluated = select_minimizer(evaluations), len(evaluations)
    else:
        best, evaluated = _greedy_search(mesh, bp, previous, g, strategy, n_jobs, backend)
    reference = None
    if strategy.compare:
        reference = brute_force_min(
            mesh, bp, g, previous, strategy.budget, keep_table=False, n_jobs=n_jobs, backend=backend
        )
    return StepResult(best.crack, best.energies, best.field, evaluated, reference)


def _rho_from_times(load: LoadTrace, mesh: Mesh, times: Sequence[float]) -> float:
    knots = list(times)
    if knots[-1] < 1.0:
        knots.append(1.0)
    pieces = [load.gradient_variation(mesh, a, b) for a, b in zip(knots, knots[1:])]
    sigma = max(pieces) if pieces else 0.0
    return sigma * load.gradient_variation(mesh, 0.0, 1.0)


def discrete_rho(load: LoadTrace, mesh: Mesh, schedule: Schedule) -> float:
    """
    rho(delta) = sigma(delta) * integral of ||grad gdot|| over [0, 1], with
    sigma(delta) the largest integral of ||grad gdot|| over one step.
    """
    return _rho_from_times(load, mesh, schedule.times)


def accumulate_work(records: List[EvolutionRecord], load: LoadTrace) -> None:
    """Fill work increments (left-endpoint rule) and their running sums in place"""
    running = 0.0
    for current, following in zip(records, records[1:] + [None]):
        current.work_integral = running
        if following is None:
            current.work_increment = 0.0
            break
        increment = load.at(following.time) - load.at(current.time)
        current.work_increment = work_rate(current.field, increment)
        running += current.work_increment


def run(
    mesh: Mesh,
    bp: BoundaryPartition,
    load: LoadTrace,
    initial_crack: CrackSet,
    schedule: Schedule,
    strategy: MinimizerStrategy,
    n_jobs: int = 1,
    backend: str = "cg",
    verbose: bool = True,
) -> List[EvolutionRecord]:
    """
    Run the incremental scheme for i = 0..N.

    Step 0 minimizes over supersets of the initial crack; every later step
    over supersets of the previous minimizer.
    """
    if load.n_nodes != mesh.n_nodes:
        raise InvalidLoadError(f"load has {load.n_nodes} nodal values, mesh has {mesh.n_nodes} nodes")
    if not is_continuum(initial_crack, mesh):
        raise InvalidCrackError("initial crack is not connected")

    times = schedule.times
    if verbose:
        print("=" * 70)
        print(f"⏳ Quasi-static evolution: {len(times)} steps, delta={schedule.delta:g}, {strategy.describe()}")
        print("=" * 70)

    records, previous = [], initial_crack
    for i, t in enumerate(times):
        result = step(mesh, bp, previous, load.at(t), strategy, n_jobs=n_jobs, backend=backend)
        if not is_subset(previous, result.crack, mesh):
            raise InvalidCrackError(f"irreversibility violated at step {i}")
        energies = result.energies
        records.append(
            EvolutionRecord(
                step=i,
                time=float(t),
                crack=result.crack,
                bulk=energies.bulk,
                surface=energies.surface,
                total=energies.total,
                grad_norm=math.sqrt(energies.bulk),
                work_rate=work_rate(result.field, load.rate(t)),
                n_candidates=result.n_candidates,
                brute_total=None if result.reference is None else result.reference.energy,
                brute_crack=None if result.reference is None else result.reference.crack,
                diverged=result.diverged,
                field=result.field,
            )
        )
        if verbose:
            grown = result.crack.n_edges - previous.n_edges
            marker = f"  🔄 +{grown} edges" if result.crack != previous else ""
            if result.diverged:
                marker += f"  ⚠️  brute force: {result.reference.crack.n_edges} edges, total={result.reference.energy:.6e}"
            print(
                f"  [{i:4d}] t={t:.4f}  edges={result.crack.n_edges:4d}  bulk={energies.bulk:.6e}  "
                f"surface={energies.surface:.6e}  total={energies.total:.6e}{marker}"
            )
        previous = result.crack

    accumulate_work(records, load)
    rho = discrete_rho(load, mesh, schedule)
    for record in records:
        record.estimate_slack = records[0].total + record.work_integral + rho - record.total
    if verbose:
        print(f"✓ Evolution finished: {previous.n_edges} crack edges, length {previous.cached_length:.6f}")
    return records


@dataclass(frozen=True, eq=False)
class EstimateAudit:
    rho: float
    worst_slack: float
    worst_pair: Tuple[int, int]
    residuals: pd.DataFrame = field(repr=False)
    passed: bool


def audit_discrete_estimate(
    records: Sequence[EvolutionRecord], load: LoadTrace, mesh: Mesh, tol: float = AUDIT_TOLERANCE
) -> EstimateAudit:
    """
    Check E_j <= E_i + (W_j - W_i) + rho(delta) for every pair i < j.

    W is the left-endpoint work integral stored in the records.
    """
    rho = _rho_from_times(load, mesh, [r.time for r in records])
    energy = np.array([r.total for r in records])
    work = np.array([r.work_integral for r in records])
    i, j = np.triu_indices(len(records), k=1)
    slack = energy[i] + (work[j] - work[i]) + rho - energy[j]
    residuals = pd.DataFrame({"i": i, "j": j, "slack": slack})
    if len(slack) == 0:
        return EstimateAudit(rho, 0.0, (0, 0), residuals, True)
    worst = int(np.argmin(slack))
    scale = 1.0 + float(np.abs(energy).max())
    return EstimateAudit(
        rho, float(slack[worst]), (int(i[worst]), int(j[worst])), residuals, bool(slack[worst] >= -tol * scale)
    )


@dataclass(frozen=True)
class AprioriAudit:
    passed: bool
    max_grad_norm: float
    load_bound: float
    max_surface: float
    surface_bound: float


def audit_apriori_bounds(
    records: Sequence[EvolutionRecord], load: LoadTrace, mesh: Mesh, tol: float = AUDIT_TOLERANCE
) -> AprioriAudit:
    """
    ||grad u_i|| <= max_t ||grad g(t)|| (no tolerance) and
    length(K_i) <= E_0 + 2 sum_r ||grad u_r|| int_r ||grad gdot|| + rho(delta).
    """
    times = [r.time for r in records]
    load_bound = load.max_gradient_norm(mesh, times)
    max_grad = max(r.grad_norm for r in records)

    knots = times + ([1.0] if times[-1] < 1.0 else [])
    chain = sum(
        2.0 * r.grad_norm * load.gradient_variation(mesh, a, b) for r, a, b in zip(records, knots, knots[1:])
    )
    surface_bound = records[0].total + chain + _rho_from_times(load, mesh, times)
    max_surface = max(r.surface for r in records)
    passed = max_grad <= load_bound and max_surface <= surface_bound + tol * (1.0 + surface_bound)
    return AprioriAudit(bool(passed), max_grad, load_bound, max_surface, surface_bound)


def audit_irreversibility(
    records: Sequence[EvolutionRecord], mesh: Mesh, initial_crack: Optional[CrackSet] = None
) -> List[int]:
    """Steps whose crack does not contain the previous one"""
    previous = initial_crack if initial_crack is not None else records[0].crack
    broken = []
    for record in records:
        if not is_subset(previous, record.crack, mesh):
            broken.append(record.step)
        previous = record.crack
    return broken


@dataclass(frozen=True)
class MonotoneAudit:
    worst_violation: float
    worst_pair: Optional[Tuple[int, int]]
    pairs_checked: int
    passed: bool


def audit_monotone_load(
    records: Sequence[EvolutionRecord],
    load: LoadTrace,
    mesh: Mesh,
    bp: BoundaryPartition,
    max_pairs: int = 400,
    n_jobs: int = 1,
    backend: str = "cg",
    tol: float = MONOTONE_TOLERANCE,
    seed: int = 0,
) -> MonotoneAudit:
    """
    For g(t) = phi(t) h with phi non-decreasing and non-negative, check
    E(g(t), K(t)) <= E(g(t), K(s)) for s < t by re-solving with the older crack.

    Beyond `max_pairs` distinct pairs, a sample drawn with `seed` is checked.
    """
    if not load.is_separable:
        raise PreconditionError("monotone-load audit needs a separable load g(t) = phi(t) h")
    if np.any(load.profile < 0) or np.any(np.diff(load.profile) < 0):
        raise PreconditionError("monotone-load audit needs phi non-negative and non-decreasing")

    n = len(records)
    pairs = [(s, t) for s, t in combinations(range(n), 2) if records[s].crack != records[t].crack]
    identical = n * (n - 1) // 2 - len(pairs)
    if len(pairs) > max_pairs:
        picks = np.sort(np.random.default_rng(seed).choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[k] for k in picks]

    keys = sorted({(records[s].crack, t) for s, t in pairs}, key=lambda key: (key[1], key[0].sort_key))
    solved = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(total_energy)(mesh, bp, load.at(records[t].time), crack, backend) for crack, t in keys
    )
    older = dict(zip(keys, solved))

    worst, worst_pair = 0.0, None
    for s, t in pairs:
        violation = records[t].total - older[(records[s].crack, t)].total
        if violation > worst:
            worst, worst_pair = violation, (s, t)
    return MonotoneAudit(float(worst), worst_pair, len(pairs) + identical, bool(worst <= tol))


@dataclass(frozen=True, eq=False)
class BalanceAudit:
    rho: float
    residuals: pd.DataFrame = field(repr=False)
    worst_steady: float
    cumulative: float
    passed: bool


def audit_energy_balance(
    records: Sequence[EvolutionRecord], load: LoadTrace, mesh: Mesh, tol: float = BALANCE_TOLERANCE
) -> BalanceAudit:
    """
    Per-step residual E_{r+1} - E_r - trapezoid(work_rate) and the cumulative
    residual E_N - E_0 - W_N.

    Steps without crack growth must balance within rho(delta) + tol; the
    cumulative residual may not exceed rho(delta) + tol.
    """
    rho = _rho_from_times(load, mesh, [r.time for r in records])
    rows = []
    for before, after in zip(records, records[1:]):
        dt = after.time - before.time
        residual = after.total - before.total - 0.5 * dt * (before.work_rate + after.work_rate)
        rows.append({"step": after.step, "residual": residual, "growth": after.crack != before.crack})
    residuals = pd.DataFrame(rows, columns=["step", "residual", "growth"])

    steady = residuals.loc[~residuals["growth"].astype(bool), "residual"].abs()
    worst_steady = float(steady.max()) if len(steady) else 0.0
    cumulative = records[-1].total - records[0].total - records[-1].work_integral
    passed = worst_steady <= rho + tol and cumulative <= rho + tol
    return BalanceAudit(rho, residuals, worst_steady, float(cumulative), bool(passed))


@dataclass(frozen=True, eq=False)
class StationarityAudit:
    table: pd.DataFrame = field(repr=False)
    passed: bool


def audit_stationarity(
    records: Sequence[EvolutionRecord],
    mesh: Mesh,
    bp: BoundaryPartition,
    load: LoadTrace,
    initial_crack: Optional[CrackSet] = None,
    n_jobs: int = 1,
    backend: str = "cg",
    tol: float = AUDIT_TOLERANCE,
) -> StationarityAudit:
    """
    Bracket d/ds E(g(t_i), K(s)) at growth steps: the secant slope from
    K_{i-1} to K_i is non-positive and no single-edge extension of K_i
    lowers the energy.
    """
    rows = []
    previous = initial_crack if initial_crack is not None else records[0].crack
    for record in records:
        if record.crack == previous:
            previous = record.crack
            continue
        g = load.at(record.time)
        before = total_energy(mesh, bp, g, previous, backend)
        grown = record.surface - before.surface
        secant = (record.total - before.total) / grown if grown > 0 else 0.0

        nodes = record.crack.nodes(mesh)
        extra = sorted({int(e) for n in nodes for e in mesh.node_edges[n]} - record.crack.edge_ids)
        extensions = [record.crack.extended(mesh, [e]) for e in extra]
        solved = evaluate_candidates(mesh, bp, g, extensions, n_jobs=n_jobs, backend=backend)
        slopes = [
            (ev.energies.total - record.total) / mesh.edge_lengths[e] for e, ev in zip(extra, solved)
        ]
        rows.append(
            {
                "step": record.step,
                "secant_slope": secant,
                "min_extension_slope": min(slopes) if slopes else math.inf,
            }
        )
        previous = record.crack

    table = pd.DataFrame(rows, columns=["step", "secant_slope", "min_extension_slope"])
    passed = bool((table["secant_slope"] <= tol).all() and (table["min_extension_slope"] >= -tol).all())
    return StationarityAudit(table, passed)


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    table: pd.DataFrame
    runs: Dict[float, List[EvolutionRecord]] = field(repr=False)


def _value_at(records, times, t):
    return records[int(np.searchsorted(times, t + 1e-12, side="right")) - 1]


def refine_and_compare(
    problem: Problem,
    deltas: Sequence[float],
    strategy: MinimizerStrategy,
    n_jobs: int = 1,
    backend: str = "cg",
) -> ConvergenceReport:
    """
    Run the same problem for decreasing time steps and compare the
    step-function trajectories on the union of all step times.
    """
    deltas = [float(d) for d in deltas]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise InvalidScheduleError(f"time steps must be strictly decreasing, got {deltas}")

    trajectories = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(run)(
            problem.mesh,
            problem.partition,
            problem.load,
            problem.initial_crack,
            Schedule(delta),
            strategy,
            1,
            backend,
            False,
        )
        for delta in deltas
    )
    runs = dict(zip(deltas, trajectories))
    grid = np.unique(np.round(np.concatenate([[r.time for r in recs] for recs in trajectories]), 12))

    rows = []
    for (da, ra), (db, rb) in combinations(runs.items(), 2):
        ta, tb = np.array([r.time for r in ra]), np.array([r.time for r in rb])
        energy_gap, crack_gap = 0.0, 0.0
        for t in grid:
            a, b = _value_at(ra, ta, t), _value_at(rb, tb, t)
            energy_gap = max(energy_gap, abs(a.total - b.total))
            if a.crack != b.crack:
                crack_gap = max(crack_gap, hausdorff_distance(a.crack, b.crack, problem.mesh))
        rows.append(
            {
                "delta_a": da,
                "delta_b": db,
                "sup_energy_diff": energy_gap,
                "sup_hausdorff": crack_gap,
                "rho_a": discrete_rho(problem.load, problem.mesh, Schedule(da)),
                "rho_b": discrete_rho(problem.load, problem.mesh, Schedule(db)),
            }
        )
    return ConvergenceReport(pd.DataFrame(rows), runs)
