import json

import numpy as np
import pytest

from onebitcs.harness import (
    CSV_HEADER,
    CaseSpec,
    ExperimentConfig,
    build_preset,
    grid_search_baseline,
    load_config,
    preset_description,
    preset_names,
    rows_to_csv,
    run_experiment,
)
from onebitcs.numerics import ContractViolation, RngStream
from onebitcs.unfolded import initialize_model, save_checkpoint
from onebitcs import cli


def make_checkpoint(tmp_path, variant="l_rfpi", n=12, m=36, layers=4, seed=1, name="ck.json"):
    enc, dec = initialize_model(variant, n, m, layers, RngStream(seed), 0.05, 2.0,
                                sparsity=2 if variant in ("l_biht", "lg_biht") else None)
    enc.phi += RngStream(seed + 100).standard_normal(enc.phi.shape) * 0.3
    path = tmp_path / name
    save_checkpoint(path, enc, dec, rng_seed=seed)
    return str(path)


def small_config(tmp_path, **kw):
    ck = make_checkpoint(tmp_path)
    base = dict(
        name="unit",
        n=12, m=36, layers=4,
        sparsity=(2,),
        cases=(
            CaseSpec("classic", "rfpi", fixed_delta=0.05, fixed_alpha=2.0),
            CaseSpec("learned", "l_rfpi", phi="checkpoint", step="checkpoint",
                     shrink="checkpoint", checkpoint="main"),
        ),
        realizations=3,
        seed=5,
        checkpoints={"main": ck},
    )
    base.update(kw)
    return ExperimentConfig(**base)


# ------------------------------------------------------------- grid search

def test_grid_search_single_point():
    got = grid_search_baseline("rfpi", 12, 36, 2, (0.05,), (2.0,), trials=3, iterations=3)
    assert got == (0.05, 2.0)


def test_grid_search_prefers_working_step():
    # a divergent step size (shrinks everything to zero) loses to a sane one
    got = grid_search_baseline("rfpi", 12, 36, 2, (0.05, 1e6), (2.0,),
                               trials=5, iterations=3)
    assert got == (0.05, 2.0)


def test_grid_search_deterministic():
    a = grid_search_baseline("biht", 12, 36, 2, (0.0,), (0.005, 0.02, 0.08),
                             trials=5, iterations=5, seed=3)
    b = grid_search_baseline("biht", 12, 36, 2, (0.0,), (0.005, 0.02, 0.08),
                             trials=5, iterations=5, seed=3)
    assert a == b


def test_grid_search_rejects_learned_algorithms():
    with pytest.raises(ContractViolation):
        grid_search_baseline("l_rfpi", 12, 36, 2, (0.05,), (2.0,))


# ------------------------------------------------------------ case masks

def test_case_spec_validation():
    with pytest.raises(ContractViolation):
        CaseSpec("x", "rfpi", thresholds="random")      # zero-threshold algorithm
    with pytest.raises(ContractViolation):
        CaseSpec("x", "grfpi", thresholds="zero")       # generalized needs thresholds
    with pytest.raises(ContractViolation):
        CaseSpec("x", "rfpi", step="checkpoint")        # classic has no per-layer params
    with pytest.raises(ContractViolation):
        CaseSpec("x", "biht", shrink="fixed")           # no shrinkage in biht family
    with pytest.raises(ContractViolation):
        CaseSpec("x", "l_rfpi", phi="checkpoint")       # checkpoint alias missing


# ---------------------------------------------------------- run_experiment

def test_run_single_realization_zero_iterations(tmp_path):
    cfg = small_config(tmp_path, layers=0, realizations=1,
                       cases=(CaseSpec("classic", "rfpi", fixed_delta=0.05, fixed_alpha=2.0),))
    result = run_experiment(cfg)
    assert len(result.records) == 1
    rec = result.records[0]
    assert rec.iteration == 0 and rec.realizations == 1


def test_run_rows_sorted_and_schema(tmp_path):
    cfg = small_config(tmp_path)
    result = run_experiment(cfg)
    keys = [(r.case, r.iteration) for r in result.records]
    assert keys == sorted(keys)
    text = rows_to_csv(result.records)
    lines = text.strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + 2 * (cfg.layers + 1)


def test_run_byte_deterministic(tmp_path):
    cfg = small_config(tmp_path)
    a = rows_to_csv(run_experiment(cfg).records)
    b = rows_to_csv(run_experiment(cfg).records)
    assert a == b


def test_reaggregation_matches_summary(tmp_path):
    cfg = small_config(tmp_path, realizations=5)
    result = run_experiment(cfg)
    for curve, stack in result.per_realization.items():
        means = stack.mean(axis=0)
        rows = [r for r in result.records if r.case == curve]
        for it, row in enumerate(rows):
            assert row.mse_amplitude == pytest.approx(means[it, 0], abs=1e-12)
            assert row.mse_direction == pytest.approx(means[it, 1], abs=1e-12)
            assert row.violations == pytest.approx(means[it, 2], abs=1e-12)


def test_random_case_independent_of_checkpoint(tmp_path):
    # the random-phi classic case must not read the checkpoint at all
    cfg1 = small_config(tmp_path)
    ck2 = make_checkpoint(tmp_path, seed=77, name="other.json")
    cfg2 = small_config(tmp_path, checkpoints={"main": ck2})
    r1 = run_experiment(cfg1)
    r2 = run_experiment(cfg2)
    rows1 = [r for r in r1.records if r.case == "classic"]
    rows2 = [r for r in r2.records if r.case == "classic"]
    assert rows1 == rows2
    learned1 = [r for r in r1.records if r.case == "learned"]
    learned2 = [r for r in r2.records if r.case == "learned"]
    assert learned1 != learned2


def test_checkpoint_dimension_mismatch_detected(tmp_path):
    ck = make_checkpoint(tmp_path, n=8, m=24, layers=4, name="small.json")
    cfg = small_config(tmp_path, checkpoints={"main": ck})
    with pytest.raises(ContractViolation):
        run_experiment(cfg)


def test_shared_random_phi_across_cases(tmp_path):
    # cases 1 and 3 of the fig2 pattern share the same random phi draw, so a
    # learned-shrinkage case with constant tau equal to delta/alpha collapses
    # onto the classic case exactly
    ck = make_checkpoint(tmp_path)
    cfg = ExperimentConfig(
        name="shared",
        n=12, m=36, layers=4, sparsity=(2,),
        cases=(
            CaseSpec("classic", "rfpi", fixed_delta=0.05, fixed_alpha=2.0),
            CaseSpec("mirror", "l_rfpi", phi="random", step="fixed", shrink="fixed",
                     fixed_delta=0.05, fixed_alpha=2.0),
        ),
        realizations=4, seed=5, checkpoints={"main": ck},
    )
    result = run_experiment(cfg)
    classic = [r for r in result.records if r.case == "classic"]
    mirror = [r for r in result.records if r.case == "mirror"]
    for a, b in zip(classic, mirror):
        assert a.mse_direction == pytest.approx(b.mse_direction, abs=1e-12)


def test_failures_excluded_and_counted(tmp_path):
    # a divergent fixed step makes rfpi shrink everything to zero at once
    cfg = small_config(tmp_path, cases=(
        CaseSpec("bad", "rfpi", fixed_delta=1e9, fixed_alpha=1e-9),
        CaseSpec("good", "rfpi", fixed_delta=0.05, fixed_alpha=2.0),
    ))
    result = run_experiment(cfg)
    assert result.summary["failures"]["bad-K2" if len(cfg.sparsity) > 1 else "bad"] == cfg.realizations
    assert all(r.case == "good" for r in result.records)


def test_baseline_resolution_fills_fixed_params(tmp_path):
    cfg = small_config(tmp_path, cases=(CaseSpec("auto", "rfpi"),))
    result = run_experiment(cfg)
    assert "rfpi" in result.summary["baselines"]
    delta, alpha = result.summary["baselines"]["rfpi"]
    assert delta > 0 and alpha > 0


def test_write_csv(tmp_path):
    cfg = small_config(tmp_path, output=str(tmp_path / "out.csv"))
    run_experiment(cfg)
    text = (tmp_path / "out.csv").read_text()
    assert text.startswith(CSV_HEADER + "\n")


# ---------------------------------------------------------------- presets

def test_preset_names_and_descriptions():
    names = preset_names()
    assert "fig2" in names and "fig2-desk" in names and len(names) == 12
    desc = preset_description("fig5-desk")
    assert desc["n"] == 32 and desc["m"] == 128 and desc["L"] == 10


def test_build_preset_requires_checkpoints():
    with pytest.raises(ContractViolation):
        build_preset("fig2-desk")


def test_build_preset_dimensions(tmp_path):
    ck = make_checkpoint(tmp_path, variant="l_rfpi", n=32, m=128, layers=10)
    cfg = build_preset("fig2-desk", checkpoints={"l_rfpi": ck}, realizations=2)
    assert (cfg.n, cfg.m, cfg.layers) == (32, 128, 10)
    assert cfg.sparsity == (2, 4, 8, 10)
    full = build_preset("fig2", checkpoints={"l_rfpi": ck})
    assert (full.n, full.m, full.layers) == (128, 512, 30)
    assert full.realizations == 128


def test_load_config_explicit(tmp_path):
    ck = make_checkpoint(tmp_path)
    doc = {
        "name": "custom", "n": 12, "m": 36, "L": 4,
        "sparsity": [2], "realizations": 2, "seed": 9,
        "checkpoints": {"main": ck},
        "cases": [
            {"case_id": "a", "algorithm": "rfpi", "fixed_delta": 0.05, "fixed_alpha": 2.0},
            {"case_id": "b", "algorithm": "l_rfpi", "phi": "checkpoint",
             "step": "checkpoint", "shrink": "checkpoint", "checkpoint": "main"},
        ],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    cfg = load_config(path)
    assert cfg.n == 12 and len(cfg.cases) == 2
    result = run_experiment(cfg)
    assert result.records


# -------------------------------------------------------------------- cli

def test_cli_preset_list(capsys):
    assert cli.main(["preset-list"]) == 0
    out = capsys.readouterr().out
    assert "fig2-desk" in out and "n=32" in out


def test_cli_solve_row_count(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    code = cli.main(["solve", "--algorithm", "biht", "--n", "64", "--m", "256",
                     "--k", "4", "--iters", "50", "--seed", "1",
                     "--delta", "0", "--alpha", "0.02", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert len(lines) == 52  # header + 51 trajectory rows
    assert lines[0] == "iteration,mse_amplitude,mse_direction,violations"


def test_cli_grid_search(capsys):
    code = cli.main(["grid-search", "--algorithm", "rfpi", "--n", "12", "--m", "36",
                     "--k", "2", "--iters", "3", "--trials", "3",
                     "--delta-grid", "0.05", "--alpha-grid", "2.0"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["delta"] == 0.05


def test_cli_train_and_eval_roundtrip(tmp_path, capsys):
    ck = tmp_path / "ck.json"
    log = tmp_path / "log.csv"
    code = cli.main(["train", "--variant", "l_rfpi", "--n", "12", "--m", "36",
                     "--layers", "2", "--k-pool", "2", "--epochs-per-round", "1",
                     "--steps-per-epoch", "2", "--batch-size", "4",
                     "--eval-realizations", "4", "--delta", "0.05", "--alpha", "2.0",
                     "--out", str(ck), "--log", str(log)])
    assert code == 0
    assert ck.exists() and log.exists()
    doc = {
        "name": "cli-eval", "n": 12, "m": 36, "L": 2, "sparsity": [2],
        "realizations": 2, "seed": 0, "checkpoints": {"main": str(ck)},
        "cases": [{"case_id": "learned", "algorithm": "l_rfpi", "phi": "checkpoint",
                   "step": "checkpoint", "shrink": "checkpoint", "checkpoint": "main"}],
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(doc))
    out_csv = tmp_path / "curves.csv"
    code = cli.main(["eval", "--config", str(cfg_path), "--out", str(out_csv)])
    assert code == 0
    assert out_csv.read_text().startswith(CSV_HEADER)


def test_cli_eval_requires_source():
    with pytest.raises(SystemExit):
        cli.main(["eval"])


def test_cli_errors_return_nonzero(tmp_path, capsys):
    code = cli.main(["eval", "--preset", "fig2-desk"])  # missing checkpoint
    assert code == 1
    assert "error:" in capsys.readouterr().err
