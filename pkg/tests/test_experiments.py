import json
import math

import numpy as np
import pytest

from bidomain_dd.experiments import (ExperimentConfig, ResultsTable, StepRow, config_from_metadata,
                                     default_probe_every, probe_schedule, run, run_beat, run_optimality,
                                     run_scaling, worker_grid)
from bidomain_dd.mesh import ConfigurationError

SMALL = dict(mesh=(4, 4, 2), subs=(2, 2, 1), slab_extent=(0.4, 0.4, 0.2), dt=0.05, t_end=0.15)


def test_results_csv_round_trip(tmp_path):
    t = ResultsTable("x")
    t.add(StepRow(1, 0.05, 2, 10, 5.0, 1.25, 3.0))
    t.add(StepRow(2, 0.1, 1, 4, 4.0, float("nan"), 2.0))
    t.write_csv(tmp_path / "r.csv")
    back = ResultsTable.read_csv(tmp_path / "r.csv")
    assert len(back.rows) == 2
    for a, b in zip(t.rows, back.rows):
        for f in ("step", "nit", "lit_total"):
            assert getattr(a, f) == getattr(b, f)
        for f in ("t_ms", "lit_avg", "wall_ms"):
            assert getattr(a, f) == getattr(b, f)
    assert math.isnan(back.rows[1].cond_est)


def test_averages_are_row_means():
    t = ResultsTable("x")
    for k, (nit, lit, cond) in enumerate([(2, 6.0, 1.5), (1, 4.0, 2.5), (0, 0.0, float("nan"))], start=1):
        t.add(StepRow(k, 0.05 * k, nit, int(nit * lit), lit, cond, 1.0))
    a = t.averages()
    assert a["nit"] == pytest.approx(1.0)
    assert a["lit"] == pytest.approx(5.0)  # steps without Newton iterations carry no linear solves
    assert a["cond"] == pytest.approx(2.0)


def test_probe_schedule():
    assert probe_schedule(40, 20) == {1, 21, 40}
    assert probe_schedule(3, 1) == {1, 2, 3}
    assert probe_schedule(0, 5) == set()
    assert default_probe_every(4, 40) == 1 and default_probe_every(8, 40) == 5 and default_probe_every(12, 40) == 20


def test_worker_grid():
    assert worker_grid(1) == (1, 1, 1)
    assert worker_grid(2) == (2, 1, 1)
    assert worker_grid(8) == (2, 2, 2)
    assert worker_grid(16) == (4, 2, 2)
    with pytest.raises(ConfigurationError):
        worker_grid(6)


@pytest.mark.parametrize("bad", [dict(scenario="x"), dict(precond="amg"), dict(primal="vx"), dict(dt=0.0),
                                 dict(mesh=(5, 4, 2)), dict(threads=0), dict(workers=(1,))])
def test_config_rejects(bad):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(**{**SMALL, **bad})


def test_single_run_outputs(tmp_path):
    cfg = ExperimentConfig(**SMALL, out=str(tmp_path), vtk_every=2)
    table = run(cfg)
    assert len(table.rows) == cfg.n_steps == 3
    vtk = sorted(tmp_path.glob("snapshot_*.vtk"))
    assert len(vtk) == cfg.n_steps // cfg.vtk_every + 1
    text = vtk[0].read_text()
    assert "CELL_TYPES" in text and "SCALARS v double" in text
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["config"]["mesh"] == [4, 4, 2] and "git" in meta
    assert config_from_metadata(tmp_path / "metadata.json") == cfg
    back = ResultsTable.read_csv(tmp_path / "results.csv")
    assert [r.nit for r in back.rows] == [r.nit for r in table.rows]


def test_single_run_deterministic():
    cfg = ExperimentConfig(**SMALL, stimulus_radius=0.2)
    a = run(cfg)
    b = run(cfg)
    assert [(r.nit, r.lit_total) for r in a.rows] == [(r.nit, r.lit_total) for r in b.rows]


@pytest.mark.parametrize("precond", ["fetidp", "none"])
def test_single_run_other_solvers(precond):
    cfg = ExperimentConfig(**{**SMALL, "precond": precond, "stimulus_radius": 0.2})
    table = run(cfg)
    assert all(r.nit >= 1 for r in table.rows)


def test_optimality_small(tmp_path):
    cfg = ExperimentConfig(**{**SMALL, "scenario": "optimality", "hh_list": (2,), "sweep_primals": ("vef",),
                              "stimulus_radius": 0.2, "out": str(tmp_path)})
    sweep = run(cfg)
    assert len(sweep.rows) == 4
    for r in sweep.rows:
        assert r.probes > 0 and r.lit > 0 and r.cond >= 1 - 1e-8
    assert "deluxe" in sweep.format()
    assert (tmp_path / "results.csv").exists() and list(tmp_path.glob("steps_*.csv"))


def test_weak_scaling_trivial():
    cfg = ExperimentConfig(**{**SMALL, "scenario": "weak", "workers": (2, 4), "local_size": 2, "t_end": 0.05,
                              "stimulus_radius": 0.2})
    t = run_scaling(cfg, "weak")
    assert [r.step for r in t.rows] == [2, 4]
    assert t.meta["speedup"][2] == 1.0
    assert t.meta["mesh"][4] == [4, 4, 2]


def test_zero_stimulus_beat_is_flat():
    cfg = ExperimentConfig(**{**SMALL, "scenario": "beat", "stimulus_amplitude": 0.0, "t_end": 0.25})
    table, info = run_beat(cfg)
    assert all(r.nit <= 1 for r in table.rows)
    assert info["bounded"] and info["v_max"] == 0.0


def test_beat_with_baseline():
    cfg = ExperimentConfig(**{**SMALL, "scenario": "beat", "stimulus_radius": 0.2, "t_end": 0.1})
    table, info = run_beat(cfg, baseline_every=1)
    assert np.isfinite(info["baseline_lit"]) and np.isfinite(info["precond_lit"])
    assert info["precond_lit"] <= info["baseline_lit"]
