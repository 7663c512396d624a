"""Experiment presets, grid-searched baselines, and deterministic CSV curves.

An experiment is a set of cases (algorithm + where each component comes
from) run over many realizations of the system: per realization a fresh
sparse signal is drawn, plus one shared random sensing matrix / threshold
vector that every "random" case uses, mirroring figure captions of the form
"random phi (same as Case 1)".  Per-iteration amplitude MSE, direction MSE,
and consistency violations are averaged over realizations and emitted as a
CSV with a fixed schema:

    case,iteration,mse_amplitude,mse_direction,violations,realizations

Rows are sorted by (case, iteration) and floats use their shortest
round-trip representation, so equal configs and seeds give byte-identical
files.  Realizations that fail (degenerate iterate) are excluded from the
means and counted in the summary's ``failures`` field.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .numerics import ContractViolation, RngStream, gaussian_matrix, gaussian_vector
from .signals import SensingModel, SignalSpec, consistency_violations, encode, mse_amplitude, mse_direction, sample_signal
from .solvers import SOLVES, DegenerateIterate, SolverConfig
from .unfolded import (
    BIHT_FAMILY,
    RFPI_FAMILY,
    VARIANTS,
    DecoderParams,
    decoder_from_classic,
    forward,
    load_checkpoint,
)

CLASSIC = ("rfpi", "biht", "grfpi", "gbiht")
ALGORITHMS = CLASSIC + VARIANTS
GENERALIZED_ALGOS = ("grfpi", "gbiht", "lg_rfpi", "lg_biht")
BIHT_ALGOS = ("biht", "gbiht", "l_biht", "lg_biht")
RFPI_ALGOS = ("rfpi", "grfpi", "l_rfpi", "lg_rfpi")

CSV_HEADER = "case,iteration,mse_amplitude,mse_direction,violations,realizations"


@dataclass(frozen=True)
class CaseSpec:
    """One curve: an algorithm plus the source of each component.

    ``phi`` and ``thresholds`` come from the shared per-realization random
    draw or a checkpoint (thresholds may also be pinned to zero).  ``step``
    and ``shrink`` select fixed classic constants or learned per-layer
    values; ``shrink`` applies to the RFPI family only.  ``checkpoint``
    names an entry of the experiment's checkpoint table.  ``fixed_delta``
    and ``fixed_alpha`` are the classic constants, filled from a grid
    search when left None.
    """

    case_id: str
    algorithm: str
    phi: str = "random"              # random | checkpoint
    thresholds: str = "zero"         # zero | random | checkpoint
    step: str = "fixed"              # fixed | checkpoint
    shrink: str = "none"             # none | fixed | checkpoint
    checkpoint: Optional[str] = None
    fixed_delta: Optional[float] = None
    fixed_alpha: Optional[float] = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ContractViolation(f"CaseSpec {self.case_id}: unknown algorithm {self.algorithm!r}")
        if self.phi not in ("random", "checkpoint"):
            raise ContractViolation(f"CaseSpec {self.case_id}: bad phi source {self.phi!r}")
        if self.thresholds not in ("zero", "random", "checkpoint"):
            raise ContractViolation(f"CaseSpec {self.case_id}: bad thresholds source {self.thresholds!r}")
        if self.algorithm not in GENERALIZED_ALGOS and self.thresholds != "zero":
            raise ContractViolation(f"CaseSpec {self.case_id}: {self.algorithm} needs zero thresholds")
        if self.algorithm in GENERALIZED_ALGOS and self.thresholds == "zero":
            raise ContractViolation(f"CaseSpec {self.case_id}: {self.algorithm} needs nonzero thresholds")
        if self.step not in ("fixed", "checkpoint"):
            raise ContractViolation(f"CaseSpec {self.case_id}: bad step source {self.step!r}")
        shrinkable = self.algorithm in RFPI_ALGOS
        if self.shrink not in (("none", "fixed", "checkpoint") if shrinkable else ("none",)):
            raise ContractViolation(f"CaseSpec {self.case_id}: bad shrink source {self.shrink!r}")
        if self.algorithm in CLASSIC and (self.step == "checkpoint" or self.shrink == "checkpoint"):
            raise ContractViolation(
                f"CaseSpec {self.case_id}: classic {self.algorithm} has no per-layer parameters; use the unfolded variant")
        needs_ck = "checkpoint" in (self.phi, self.thresholds, self.step, self.shrink)
        if needs_ck and self.checkpoint is None:
            raise ContractViolation(f"CaseSpec {self.case_id}: a component references a checkpoint but none is named")


@dataclass
class ExperimentConfig:
    name: str
    n: int
    m: int
    layers: int
    sparsity: tuple
    cases: tuple
    realizations: int = 128
    seed: int = 0
    smoothness: float = 50.0
    checkpoints: dict = field(default_factory=dict)   # alias -> path or (enc, dec) pair
    output: Optional[str] = None
    grid_trials: int = 20


@dataclass(frozen=True)
class RunRecord:
    case: str
    iteration: int
    mse_amplitude: float
    mse_direction: float
    violations: float
    realizations: int


@dataclass
class ExperimentResult:
    records: list
    summary: dict
    per_realization: dict  # curve id -> float array (realizations, iterations+1, 3)


# ------------------------------------------------------------- grid search

DEFAULT_DELTA_GRID = (0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0)
DEFAULT_ALPHA_GRID = (0.1, 0.3, 1.0, 3.0, 10.0, 30.0)
DEFAULT_BIHT_ALPHA_GRID = (0.0003, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3)


def grid_search_baseline(algorithm: str, n: int, m: int, sparsity, delta_grid,
                         alpha_grid, trials: int = 20, iterations: int = 10,
                         seed: int = 0) -> tuple:
    """Pick the (delta, alpha) grid point with the lowest mean final
    direction MSE over seeded trials; ties go to the smaller values.

    ``sparsity`` may be a single level or a pool the trials cycle through.
    The BIHT family ignores delta (pass a one-point grid); generalized
    algorithms draw random thresholds per trial like their Case-1 setups.
    Every grid point sees the same trial instances, and failed runs score
    infinity.
    """
    if algorithm not in CLASSIC:
        raise ContractViolation(f"grid_search_baseline: {algorithm!r} is not a classic solver")
    if not len(delta_grid) or not len(alpha_grid):
        raise ContractViolation("grid_search_baseline: grids must be non-empty")
    pool = tuple(int(k) for k in np.atleast_1d(sparsity))
    solve = SOLVES[algorithm]
    instances = []
    for t in range(trials):
        rng = RngStream(seed).child(f"grid-trial-{t}")
        k = pool[t % len(pool)]
        sig = sample_signal(SignalSpec(n, k), rng.child("signal"))
        phi = gaussian_matrix(rng.child("phi"), m, n)
        if algorithm in GENERALIZED_ALGOS:
            b = gaussian_vector(rng.child("thresholds"), m)
        else:
            b = np.zeros(m)
        instances.append((sig, SensingModel(phi=phi, thresholds=b), k))
    best = None
    best_score = np.inf
    for delta in sorted(float(d) for d in delta_grid):
        for alpha in sorted(float(a) for a in alpha_grid):
            scores = []
            for sig, model, k in instances:
                cfg = SolverConfig(delta, alpha, iterations,
                                   sparsity=k if algorithm in BIHT_ALGOS else None)
                try:
                    traj = solve(sig, model, cfg)
                    scores.append(traj.metrics[-1][1])
                except DegenerateIterate:
                    scores.append(np.inf)
            score = float(np.mean(scores))
            if score < best_score:
                best_score = score
                best = (delta, alpha)
    if best is None or not np.isfinite(best_score):
        raise ContractViolation("grid_search_baseline: every grid point failed")
    return best


def _resolve_baselines(cfg: ExperimentConfig) -> tuple:
    """Fill in fixed_delta/fixed_alpha on cases that left them None, one
    grid search per algorithm (seeded from the experiment seed)."""
    cache = {}
    resolved = []
    for case in cfg.cases:
        if case.step == "fixed" and (case.fixed_delta is None or case.fixed_alpha is None):
            algo = case.algorithm
            classic = {"l_rfpi": "rfpi", "lg_rfpi": "grfpi", "l_biht": "biht",
                       "lg_biht": "gbiht"}.get(algo, algo)
            if classic not in cache:
                dgrid = (0.0,) if classic in BIHT_ALGOS else DEFAULT_DELTA_GRID
                agrid = DEFAULT_BIHT_ALPHA_GRID if classic in BIHT_ALGOS else DEFAULT_ALPHA_GRID
                cache[classic] = grid_search_baseline(
                    classic, cfg.n, cfg.m, cfg.sparsity, dgrid, agrid,
                    trials=cfg.grid_trials, iterations=cfg.layers,
                    seed=RngStream(cfg.seed).child(f"grid-search/{classic}").seed)
            delta, alpha = cache[classic]
            case = replace(case,
                           fixed_delta=delta if case.fixed_delta is None else case.fixed_delta,
                           fixed_alpha=alpha if case.fixed_alpha is None else case.fixed_alpha)
        resolved.append(case)
    return tuple(resolved), cache


# ---------------------------------------------------------------- running

def _load_checkpoints(cfg: ExperimentConfig) -> dict:
    loaded = {}
    for alias, ref in cfg.checkpoints.items():
        if isinstance(ref, (tuple, list)):
            loaded[alias] = (ref[0], ref[1])
        else:
            enc, dec, _ = load_checkpoint(ref)
            loaded[alias] = (enc, dec)
    return loaded


def _case_model(case: CaseSpec, cfg: ExperimentConfig, cks: dict,
                shared_phi, shared_b) -> SensingModel:
    ck = cks.get(case.checkpoint) if case.checkpoint else None
    if case.phi == "checkpoint":
        phi = ck[0].phi
        if phi.shape != (cfg.m, cfg.n):
            raise ContractViolation(
                f"case {case.case_id}: checkpoint phi {phi.shape} does not match config ({cfg.m}, {cfg.n})")
    else:
        phi = shared_phi
    if case.thresholds == "zero":
        b = np.zeros(cfg.m)
    elif case.thresholds == "random":
        b = shared_b
    else:
        b = ck[0].thresholds
        if b.shape != (cfg.m,):
            raise ContractViolation(f"case {case.case_id}: checkpoint thresholds do not match m={cfg.m}")
    return SensingModel(phi=phi, thresholds=b, smoothness=cfg.smoothness)


def _case_decoder(case: CaseSpec, cfg: ExperimentConfig, cks: dict, k: int) -> DecoderParams:
    """Per-layer parameters for an unfolded case, mixing checkpoint values
    with classic constants per the component mask.  The sparsity fed to the
    hard-threshold operator is the evaluated signal's true k."""
    variant = case.algorithm
    ck_dec = cks[case.checkpoint][1] if case.checkpoint else None
    if ck_dec is not None and ck_dec.layers != cfg.layers:
        raise ContractViolation(
            f"case {case.case_id}: checkpoint has L={ck_dec.layers}, config wants L={cfg.layers}")
    if case.step == "checkpoint":
        delta = ck_dec.delta.copy()
    else:
        base = decoder_from_classic(variant, cfg.layers, cfg.n, case.fixed_delta,
                                    case.fixed_alpha, sparsity=k if variant in BIHT_FAMILY else None)
        delta = base.delta
    if variant in RFPI_FAMILY:
        if case.shrink == "checkpoint":
            tau = ck_dec.tau.copy()
        else:
            tau = np.full((cfg.layers, cfg.n), case.fixed_delta / case.fixed_alpha)
        return DecoderParams(variant, delta, tau=tau)
    return DecoderParams(variant, delta, sparsity=k)


def _run_case_once(case: CaseSpec, cfg: ExperimentConfig, cks: dict, signal,
                   shared_phi, shared_b, k: int) -> np.ndarray:
    """One realization of one case: (iterations+1, 3) metric rows."""
    model = _case_model(case, cfg, cks, shared_phi, shared_b)
    if case.algorithm in CLASSIC:
        solver_cfg = SolverConfig(case.fixed_delta, case.fixed_alpha, cfg.layers,
                                  sparsity=k if case.algorithm in BIHT_ALGOS else None)
        traj = SOLVES[case.algorithm](signal, model, solver_cfg)
        return np.asarray(traj.metrics, dtype=np.float64)
    dec = _case_decoder(case, cfg, cks, k)
    out = forward(model, dec, signal, mode="eval")
    meas = encode(model, signal.values, "exact")
    rows = []
    for est in [out.initial] + out.per_layer_estimates:
        direction = float("nan") if not np.any(est) else mse_direction(signal.values, est)
        rows.append((mse_amplitude(signal.values, est), direction,
                     consistency_violations(meas, model, est)))
    return np.asarray(rows, dtype=np.float64)


def _curve_id(case: CaseSpec, k: int, multi_k: bool) -> str:
    return f"{case.case_id}-K{k}" if multi_k else case.case_id


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run all cases over all realizations and sparsity levels.

    Deterministic given (config, seed): realizations use child streams keyed
    by index, and aggregation order is fixed by realization index regardless
    of the worker count (ONEBITCS_WORKERS, default serial).
    """
    cases, baselines = _resolve_baselines(cfg)
    cks = _load_checkpoints(cfg)
    multi_k = len(cfg.sparsity) > 1
    root = RngStream(cfg.seed)

    def one_realization(args):
        k, idx = args
        rng = root.child(f"K{k}/realization-{idx}")
        signal = sample_signal(SignalSpec(cfg.n, int(k)), rng.child("signal"))
        shared_phi = gaussian_matrix(rng.child("phi"), cfg.m, cfg.n)
        shared_b = gaussian_vector(rng.child("thresholds"), cfg.m)
        out = {}
        for case in cases:
            curve = _curve_id(case, k, multi_k)
            try:
                out[curve] = _run_case_once(case, cfg, cks, signal, shared_phi, shared_b, int(k))
            except DegenerateIterate:
                out[curve] = None
        return out

    jobs = [(k, idx) for k in cfg.sparsity for idx in range(cfg.realizations)]
    workers = int(os.environ.get("ONEBITCS_WORKERS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(one_realization, jobs))
    else:
        outputs = [one_realization(j) for j in jobs]

    per_real: dict = {}
    failures: dict = {}
    for out in outputs:
        for curve, rows in out.items():
            if rows is None:
                failures[curve] = failures.get(curve, 0) + 1
            else:
                per_real.setdefault(curve, []).append(rows)

    records = []
    final = {}
    for curve in sorted(per_real):
        stack = np.stack(per_real[curve])          # (count, iters+1, 3)
        per_real[curve] = stack
        means = stack.mean(axis=0)
        count = stack.shape[0]
        for it in range(means.shape[0]):
            records.append(RunRecord(curve, it, float(means[it, 0]),
                                     float(means[it, 1]), float(means[it, 2]), count))
        final[curve] = {"mse_amplitude": float(means[-1, 0]),
                        "mse_direction": float(means[-1, 1])}
    records.sort(key=lambda r: (r.case, r.iteration))

    summary = {"name": cfg.name, "failures": failures, "final": final,
               "baselines": {k: list(v) for k, v in baselines.items()}}
    result = ExperimentResult(records=records, summary=summary, per_realization=per_real)
    if cfg.output:
        write_csv(cfg.output, records)
    return result


def rows_to_csv(records) -> str:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(f"{r.case},{r.iteration},{r.mse_amplitude!r},{r.mse_direction!r},"
                     f"{r.violations!r},{r.realizations}")
    return "\n".join(lines) + "\n"


def write_csv(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(rows_to_csv(records))


# ----------------------------------------------------------------- presets

FULL_DIMS = dict(n=128, m=512, layers=30, realizations=128)
DESK_DIMS = dict(n=32, m=128, layers=10, realizations=64)


def _fig2_cases():
    return (
        CaseSpec("case1-rfpi-random", "rfpi"),
        CaseSpec("case2-rfpi-learned-phi", "rfpi", phi="checkpoint", checkpoint="l_rfpi"),
        CaseSpec("case3-lrfpi-learned-tau", "l_rfpi", phi="random", step="fixed",
                 shrink="checkpoint", checkpoint="l_rfpi"),
        CaseSpec("case4-lrfpi", "l_rfpi", phi="checkpoint", step="checkpoint",
                 shrink="checkpoint", checkpoint="l_rfpi"),
    )


def _fig3_cases():
    return (
        CaseSpec("case1-grfpi-random", "grfpi", thresholds="random"),
        CaseSpec("case2-grfpi-learned-enc", "grfpi", phi="checkpoint",
                 thresholds="checkpoint", checkpoint="lg_rfpi"),
        CaseSpec("case3-lgrfpi", "lg_rfpi", phi="checkpoint", thresholds="checkpoint",
                 step="checkpoint", shrink="checkpoint", checkpoint="lg_rfpi"),
    )


def _fig4_cases():
    return (
        CaseSpec("grfpi-random", "grfpi", thresholds="random"),
        CaseSpec("lgrfpi", "lg_rfpi", phi="checkpoint", thresholds="checkpoint",
                 step="checkpoint", shrink="checkpoint", checkpoint="lg_rfpi"),
        CaseSpec("lrfpi", "l_rfpi", phi="checkpoint", step="checkpoint",
                 shrink="checkpoint", checkpoint="l_rfpi"),
    )


def _fig5_cases():
    return (
        CaseSpec("case1-biht-random", "biht"),
        CaseSpec("case2-lbiht-learned-steps", "l_biht", phi="random",
                 step="checkpoint", checkpoint="l_biht"),
        CaseSpec("case3-biht-learned-phi", "biht", phi="checkpoint", checkpoint="l_biht"),
        CaseSpec("case4-lbiht", "l_biht", phi="checkpoint", step="checkpoint",
                 checkpoint="l_biht"),
        CaseSpec("rfpi-reference", "rfpi"),
    )


def _fig6_cases():
    return (
        CaseSpec("case1-gbiht-random", "gbiht", thresholds="random"),
        CaseSpec("case2-gbiht-learned-enc", "gbiht", phi="checkpoint",
                 thresholds="checkpoint", checkpoint="lg_biht"),
        CaseSpec("case3-lgbiht", "lg_biht", phi="checkpoint", thresholds="checkpoint",
                 step="checkpoint", checkpoint="lg_biht"),
        CaseSpec("grfpi-reference", "grfpi", thresholds="random"),
        CaseSpec("lgrfpi-reference", "lg_rfpi", phi="checkpoint", thresholds="checkpoint",
                 step="checkpoint", shrink="checkpoint", checkpoint="lg_rfpi"),
    )


_PRESET_TABLE = {
    # name: (case factory, full-scale sparsity list, desk sparsity list, checkpoint aliases)
    "fig2": (_fig2_cases, (8, 16, 32, 40), (2, 4, 8, 10), ("l_rfpi",)),
    "fig3": (_fig3_cases, (8, 16, 32, 40), (2, 4, 8, 10), ("lg_rfpi",)),
    "fig4": (_fig4_cases, (24,), (6,), ("l_rfpi", "lg_rfpi")),
    "fig5": (_fig5_cases, (16, 24), (4, 6), ("l_biht",)),
    "fig6": (_fig6_cases, (16, 24), (4, 6), ("lg_biht", "lg_rfpi")),
    "fig7": (_fig6_cases, (16, 24), (4, 6), ("lg_biht", "lg_rfpi")),
}


def preset_names() -> list:
    names = []
    for base in sorted(_PRESET_TABLE):
        names.extend([base, base + "-desk"])
    return names


def preset_requirements(name: str) -> tuple:
    """Checkpoint aliases a preset needs."""
    base = name[:-5] if name.endswith("-desk") else name
    if base not in _PRESET_TABLE:
        raise ContractViolation(f"unknown preset {name!r}")
    return _PRESET_TABLE[base][3]


def build_preset(name: str, seed: int = 0, checkpoints: Optional[dict] = None,
                 output: Optional[str] = None, realizations: Optional[int] = None) -> ExperimentConfig:
    """Instantiate a named preset.

    Full-scale presets use n=128, m=512, L=30 over 128 realizations; the
    ``-desk`` variants shrink to n=32, m=128, L=10 over 64 realizations (and
    scale the sparsity levels accordingly) so they finish in minutes.
    """
    desk = name.endswith("-desk")
    base = name[:-5] if desk else name
    if base not in _PRESET_TABLE:
        raise ContractViolation(f"unknown preset {name!r}")
    factory, full_k, desk_k, needed = _PRESET_TABLE[base]
    checkpoints = dict(checkpoints or {})
    missing = [alias for alias in needed if alias not in checkpoints]
    if missing:
        raise ContractViolation(f"preset {name}: missing checkpoints {missing}")
    dims = DESK_DIMS if desk else FULL_DIMS
    return ExperimentConfig(
        name=name,
        n=dims["n"], m=dims["m"], layers=dims["layers"],
        sparsity=desk_k if desk else full_k,
        cases=factory(),
        realizations=realizations if realizations is not None else dims["realizations"],
        seed=seed,
        checkpoints=checkpoints,
        output=output,
    )


def preset_description(name: str) -> dict:
    desk = name.endswith("-desk")
    base = name[:-5] if desk else name
    factory, full_k, desk_k, needed = _PRESET_TABLE[base]
    dims = DESK_DIMS if desk else FULL_DIMS
    return {
        "preset": name,
        "n": dims["n"], "m": dims["m"], "L": dims["layers"],
        "realizations": dims["realizations"],
        "sparsity": list(desk_k if desk else full_k),
        "cases": [c.case_id for c in factory()],
        "checkpoints": list(needed),
    }


# ------------------------------------------------------------- config file

def load_config(path) -> ExperimentConfig:
    """Read an experiment config JSON: either {"preset": name, ...overrides}
    or a fully explicit document (see README for the schema)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "preset" in doc:
        return build_preset(doc["preset"], seed=doc.get("seed", 0),
                            checkpoints=doc.get("checkpoints"),
                            output=doc.get("output"),
                            realizations=doc.get("realizations"))
    cases = tuple(CaseSpec(**c) for c in doc["cases"])
    return ExperimentConfig(
        name=doc.get("name", "custom"),
        n=doc["n"], m=doc["m"], layers=doc["L"],
        sparsity=tuple(doc["sparsity"]),
        cases=cases,
        realizations=doc.get("realizations", 128),
        seed=doc.get("seed", 0),
        smoothness=doc.get("t", 50.0),
        checkpoints=doc.get("checkpoints", {}),
        output=doc.get("output"),
    )
