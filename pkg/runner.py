"""
End-to-end operations: run an evolution from a config, re-audit a recorded
run, dump an oracle table, evaluate one crack.

The *_tool functions at the bottom wrap these for the HTTP service and
report {"success": bool, ...} dicts; execute_function dispatches by name.
"""

import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import artifacts
from config import CrackSpec, RunConfig, parse_config
from errors import ConfigError, MissingArtifactError, PreconditionError
from evolution import (
    EvolutionRecord,
    Problem,
    accumulate_work,
    audit_apriori_bounds,
    audit_discrete_estimate,
    audit_energy_balance,
    audit_irreversibility,
    audit_monotone_load,
    audit_stationarity,
    run,
)
from oracle import brute_force_min, dump_table
from sif import griffith_audit
from solver import evaluate_crack, work_rate

CONSISTENCY_TOL = 1e-8


def _finite(value):
    """JSON-safe float: NaN and infinities become None"""
    value = float(value)
    return value if math.isfinite(value) else None


def run_audits(
    records: List[EvolutionRecord], problem: Problem, config: RunConfig, verbose: bool = True
) -> Tuple[Dict[str, dict], Optional[object]]:
    """
    Run every audit enabled in the config.

    Returns:
    --------
    (verdicts, griffith_table) where verdicts maps audit name to a
    JSON-ready dict with at least a "passed" flag.
    """
    mesh, bp, load = problem.mesh, problem.partition, problem.load
    toggles = config.audits
    verdicts = {}

    broken = audit_irreversibility(records, mesh, problem.initial_crack)
    verdicts["irreversibility"] = {"passed": not broken, "violations": broken}

    if toggles.discrete_estimate:
        audit = audit_discrete_estimate(records, load, mesh)
        verdicts["discrete_estimate"] = {
            "passed": audit.passed,
            "rho": _finite(audit.rho),
            "worst_slack": _finite(audit.worst_slack),
            "worst_pair": list(audit.worst_pair),
        }

    if toggles.apriori:
        audit = audit_apriori_bounds(records, load, mesh)
        verdicts["apriori"] = {
            "passed": audit.passed,
            "max_grad_norm": _finite(audit.max_grad_norm),
            "load_bound": _finite(audit.load_bound),
            "max_surface": _finite(audit.max_surface),
            "surface_bound": _finite(audit.surface_bound),
        }

    if toggles.monotone_load:
        try:
            audit = audit_monotone_load(
                records, load, mesh, bp, n_jobs=config.threads, backend=config.backend, seed=config.seed
            )
            verdicts["monotone_load"] = {
                "passed": audit.passed,
                "worst_violation": _finite(audit.worst_violation),
                "worst_pair": list(audit.worst_pair) if audit.worst_pair else None,
                "pairs_checked": audit.pairs_checked,
            }
        except PreconditionError as e:
            verdicts["monotone_load"] = {"passed": True, "skipped": str(e)}

    if toggles.energy_balance:
        audit = audit_energy_balance(records, load, mesh)
        verdicts["energy_balance"] = {
            "passed": audit.passed,
            "rho": _finite(audit.rho),
            "worst_steady_residual": _finite(audit.worst_steady),
            "cumulative_residual": _finite(audit.cumulative),
        }

    if toggles.stationarity:
        audit = audit_stationarity(
            records, mesh, bp, load, problem.initial_crack, n_jobs=config.threads, backend=config.backend
        )
        verdicts["stationarity"] = {
            "passed": audit.passed,
            "growth_steps": [int(s) for s in audit.table["step"]],
            "max_secant_slope": _finite(audit.table["secant_slope"].max()) if len(audit.table) else None,
            "min_extension_slope": _finite(audit.table["min_extension_slope"].min()) if len(audit.table) else None,
        }

    griffith_table = None
    if toggles.griffith:
        report = griffith_audit(
            records,
            mesh,
            bp,
            load,
            initial_crack=problem.initial_crack,
            tol=toggles.griffith_tol,
            with_release_rate=toggles.release_rate,
            backend=config.backend,
        )
        griffith_table = report.table
        verdicts["griffith"] = {
            "passed": report.passed,
            "tol": toggles.griffith_tol,
            "worst_growth": _finite(report.worst_growth),
            "worst_frozen": _finite(report.worst_frozen),
            "unclassifiable_steps": report.unclassifiable,
            "unresolved_tips": [list(item) for item in report.unresolved],
        }

    if verbose:
        for name, verdict in verdicts.items():
            marker = "✓" if verdict["passed"] else "✗"
            note = f" (skipped: {verdict['skipped']})" if "skipped" in verdict else ""
            print(f"  {marker} {name}{note}")
    return verdicts, griffith_table


def _canonical_text(config: RunConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True)


def run_from_config(
    config: RunConfig,
    config_text: Optional[str] = None,
    output_dir: Optional[Union[str, Path]] = None,
    verbose: bool = True,
) -> dict:
    """
    Execute the evolution and the enabled audits, write all artifacts and
    return the summary that was written to summary.json.
    """
    problem = config.build_problem()
    schedule = config.build_schedule()
    strategy = config.strategy.build()
    out = config.resolved_output_dir(output_dir)
    (out / artifacts.SNAPSHOT_DIR).mkdir(parents=True, exist_ok=True)

    records = run(
        problem.mesh,
        problem.partition,
        problem.load,
        problem.initial_crack,
        schedule,
        strategy,
        n_jobs=config.threads,
        backend=config.backend,
        verbose=verbose,
    )
    if verbose:
        print("\n🔄 Audits")
    verdicts, griffith_table = run_audits(records, problem, config, verbose=verbose)

    mesh = problem.mesh
    artifacts.write_evolution_csv(records, out / artifacts.EVOLUTION_CSV)
    artifacts.write_sif_csv(griffith_table, out / artifacts.SIF_CSV)
    for record in records:
        if record.step % config.snapshot_every == 0 or record is records[-1]:
            artifacts.write_snapshot(
                mesh,
                record.crack,
                out / artifacts.SNAPSHOT_DIR / f"step_{record.step:04d}.svg",
                title=f"t = {record.time:.4f}",
            )
    if config.dump_fields:
        (out / artifacts.FIELD_DIR).mkdir(exist_ok=True)
        for record in records:
            artifacts.write_field_dump(record.field, out / artifacts.FIELD_DIR / f"step_{record.step:04d}.json")

    summary = {
        "inputs_digest": artifacts.text_digest(config_text if config_text is not None else _canonical_text(config)),
        "delta": config.delta,
        "strategy": strategy.describe(),
        "mesh": {
            "nodes": mesh.n_nodes,
            "triangles": mesh.n_triangles,
            "edges": mesh.n_edges,
            "h": mesh.h,
        },
        "initial_crack": artifacts.crack_to_json(problem.initial_crack, mesh),
        "steps": [
            {
                "i": r.step,
                "t": r.time,
                "bulk": r.bulk,
                "surface": r.surface,
                "total": r.total,
                "n_candidates": r.n_candidates,
                "crack": artifacts.crack_to_json(r.crack, mesh),
            }
            for r in records
        ],
        "audits": verdicts,
        "passed": all(v["passed"] for v in verdicts.values()),
    }
    if strategy.compare:
        for entry, record in zip(summary["steps"], records):
            entry["brute_total"] = record.brute_total
            entry["brute_crack"] = artifacts.crack_to_json(record.brute_crack, mesh)
            entry["diverged"] = record.diverged
        summary["divergence"] = {
            "brute_budget": strategy.budget,
            "diverged_steps": [r.step for r in records if r.diverged],
        }
    artifacts.write_json(summary, out / artifacts.SUMMARY_JSON)
    if verbose:
        if strategy.compare:
            diverged = summary["divergence"]["diverged_steps"]
            marker = "⚠️ " if diverged else "✓"
            print(f"\n{marker} Greedy vs brute force: {len(diverged)} of {len(records)} steps diverge {diverged}")
        print(f"\n✓ Artifacts written to {out}")
    return summary


def audit_run_dir(config: RunConfig, run_dir: Union[str, Path], verbose: bool = True) -> dict:
    """
    Re-solve every recorded crack, check the recorded energies and rerun the
    audits on them. Writes verdict.json into the run directory.
    """
    run_dir = Path(run_dir)
    table = artifacts.read_evolution_csv(run_dir / artifacts.EVOLUTION_CSV)
    summary = artifacts.read_json(run_dir / artifacts.SUMMARY_JSON)
    steps = summary.get("steps", [])
    if len(steps) != len(table):
        raise MissingArtifactError(
            f"{artifacts.EVOLUTION_CSV} has {len(table)} rows but {artifacts.SUMMARY_JSON} lists {len(steps)} steps"
        )

    problem = config.build_problem()
    mesh, bp, load = problem.mesh, problem.partition, problem.load
    records, inconsistencies = [], []
    for row, entry in zip(table.itertuples(index=False), steps):
        crack = artifacts.crack_from_json(entry["crack"], mesh)
        u, energies = evaluate_crack(mesh, bp, load.at(row.t), crack, config.backend)
        scale = 1.0 + abs(energies.total)
        checks = [
            ("total", row.total, energies.total),
            ("bulk", row.bulk, energies.bulk),
            ("surface", row.surface, energies.surface),
            ("total = bulk + surface", row.total, row.bulk + row.surface),
        ]
        for name, recorded, expected in checks:
            if abs(recorded - expected) > CONSISTENCY_TOL * scale:
                inconsistencies.append(
                    f"step {int(row.i)}: recorded {name} {recorded:.12e} differs from {expected:.12e}"
                )
        records.append(
            EvolutionRecord(
                step=int(row.i),
                time=float(row.t),
                crack=crack,
                bulk=float(row.bulk),
                surface=float(row.surface),
                total=float(row.total),
                grad_norm=math.sqrt(energies.bulk),
                work_rate=work_rate(u, load.rate(row.t)),
                field=u,
            )
        )
    accumulate_work(records, load)

    if verbose:
        print("=" * 70)
        print(f"🔄 Auditing {run_dir}")
        print("=" * 70)
    verdicts, _ = run_audits(records, problem, config, verbose=verbose)
    verdicts["energy_consistency"] = {"passed": not inconsistencies, "violations": inconsistencies}
    if verbose:
        for line in inconsistencies:
            print(f"  ✗ {line}")

    failed = sorted(name for name, verdict in verdicts.items() if not verdict["passed"])
    verdict = {"run_dir": str(run_dir), "audits": verdicts, "failed": failed, "passed": not failed}
    artifacts.write_json(verdict, run_dir / artifacts.VERDICT_JSON)
    return verdict


def oracle_table(
    config: RunConfig,
    step: int = 0,
    budget: Optional[int] = None,
    output_dir: Optional[Union[str, Path]] = None,
    verbose: bool = True,
) -> dict:
    """Brute-force minimization from the initial crack at the load of one step"""
    problem = config.build_problem()
    times = config.build_schedule().times
    if not 0 <= step < len(times):
        raise ConfigError(f"step {step} outside 0..{len(times) - 1}", [f"step: outside 0..{len(times) - 1}"])
    budget = config.strategy.budget if budget is None else budget
    out = config.resolved_output_dir(output_dir)

    result = brute_force_min(
        problem.mesh,
        problem.partition,
        problem.load.at(times[step]),
        problem.initial_crack,
        budget,
        n_jobs=config.threads,
        backend=config.backend,
    )
    path = dump_table(result, out / f"oracle_step_{step:04d}.csv")
    if verbose:
        print(f"✓ Oracle: {result.n_candidates} candidates, optimum {result.crack.n_edges} edges, energy {result.energy:.12e}")
        print(f"  table written to {path}")
    return {
        "crack": artifacts.crack_to_json(result.crack, problem.mesh),
        "energy": result.energy,
        "bulk": result.bulk,
        "surface": result.surface,
        "n_candidates": result.n_candidates,
        "table_path": str(path),
    }


def crack_energy(config: RunConfig, crack: CrackSpec, time: float = 1.0) -> dict:
    """Energies of one crack under the configured load at one time"""
    if not 0.0 <= time <= 1.0:
        raise ConfigError(f"time {time} outside [0, 1]", ["time: outside [0, 1]"])
    problem = config.build_problem()
    candidate = crack.build(problem.mesh)
    _, energies = evaluate_crack(problem.mesh, problem.partition, problem.load.at(time), candidate, config.backend)
    return {
        "crack": artifacts.crack_to_json(candidate, problem.mesh),
        "bulk": energies.bulk,
        "surface": energies.surface,
        "total": energies.total,
    }


def run_evolution_tool(config, output_dir=None):
    """
    Run an evolution from a config dict.

    Returns:
    --------
    dict with:
        - success: bool
        - passed: bool (all enabled audits)
        - audits: per-audit verdicts
        - final: energies and crack of the last step
    """
    try:
        cfg = parse_config(config)
        summary = run_from_config(cfg, json.dumps(config, sort_keys=True), output_dir=output_dir, verbose=False)
        return {
            "success": True,
            "passed": summary["passed"],
            "audits": summary["audits"],
            "final": summary["steps"][-1],
            "output_dir": str(cfg.resolved_output_dir(output_dir)),
        }
    except Exception as e:
        return {"success": False, "error": str(e), "passed": None}


def audit_run_tool(config, run_dir):
    """Re-audit a recorded run directory against its config dict"""
    try:
        verdict = audit_run_dir(parse_config(config), run_dir, verbose=False)
        return {"success": True, **verdict}
    except Exception as e:
        return {"success": False, "error": str(e), "passed": None}


def oracle_tool(config, step=0, budget=None, output_dir=None):
    """Brute-force optimum and candidate table for one step of a config dict"""
    try:
        return {"success": True, **oracle_table(parse_config(config), step, budget, output_dir, verbose=False)}
    except Exception as e:
        return {"success": False, "error": str(e)}


def crack_energy_tool(config, crack, time=1.0):
    """Bulk, surface and total energy of one crack spec"""
    try:
        return {"success": True, **crack_energy(parse_config(config), CrackSpec.model_validate(crack), float(time))}
    except Exception as e:
        return {"success": False, "error": str(e)}


AVAILABLE_FUNCTIONS = {
    "run_evolution": run_evolution_tool,
    "audit_run": audit_run_tool,
    "oracle_table": oracle_tool,
    "crack_energy": crack_energy_tool,
}


def execute_function(function_name, **kwargs):
    """
    Execute a function by name with given arguments

    Parameters:
    -----------
    function_name : str
        Name of the function to execute
    **kwargs : dict
        Function arguments

    Returns:
    --------
    dict with function result or error
    """
    if function_name not in AVAILABLE_FUNCTIONS:
        return {
            "success": False,
            "error": f"Unknown function: {function_name}. Available: {list(AVAILABLE_FUNCTIONS.keys())}",
        }
    try:
        return AVAILABLE_FUNCTIONS[function_name](**kwargs)
    except TypeError as e:
        return {"success": False, "error": f"Invalid arguments for {function_name}: {str(e)}"}
    except Exception as e:
        return {"success": False, "error": f"Error executing {function_name}: {str(e)}"}


if __name__ == "__main__":
    print("\n" + "=" * 70)
    print("Runner - Testing All Functions")
    print("=" * 70)

    demo = {
        "mesh": {"kind": "rect", "width": 1.0, "height": 1.0, "h": 0.25},
        "boundary": {"sides": {"left": "dirichlet", "right": "dirichlet", "top": "neumann", "bottom": "neumann"}},
        "load": {"kind": "separable", "field": {"kind": "affine", "cx": 2.0}},
        "initial_crack": {"kind": "segment", "start": [0.5, 0.0], "end": [0.5, 0.25]},
        "delta": 0.25,
        "strategy": {"kind": "brute", "budget": 3},
        "output_dir": "runs/demo",
    }

    print("\n[Test 1] Energy of the full vertical cut at t = 1")
    result1 = execute_function(
        "crack_energy", config=demo, crack={"kind": "segment", "start": [0.5, 0.0], "end": [0.5, 1.0]}
    )
    print(f"Result: {result1}")

    print("\n[Test 2] Run the crossover evolution")
    result2 = execute_function("run_evolution", config=demo)
    print(f"Result: passed={result2.get('passed')} final surface={result2.get('final', {}).get('surface')}")

    print("\n[Test 3] Re-audit the run")
    result3 = execute_function("audit_run", config=demo, run_dir=result2.get("output_dir", "runs/demo"))
    print(f"Result: passed={result3.get('passed')} failed={result3.get('failed')}")

    print("\n[Test 4] Unknown function")
    print(f"Result: {execute_function('no_such_tool')}")
