from __future__ import annotations

import importlib.util
from pathlib import Path

import pandas as pd

from legforge.experiment import FINAL_POPULATION_CSV, INCOMPLETE_MARKER, STATS_CSV, write_manifest


def _load_app_module():
    app_path = Path(__file__).resolve().parents[1] / "app.py"
    spec = importlib.util.spec_from_file_location("app_module_for_test", app_path)
    if spec is None or spec.loader is None:
        raise RuntimeError("Failed to load app.py module")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


app_module = _load_app_module()


class _FakeSelectEvent:
    def __init__(self, index):
        self.index = index


def _make_run(runs: Path, name: str = "soil-r00", *, status: str = "complete") -> Path:
    run_dir = runs / name
    (run_dir / "meshes").mkdir(parents=True)
    write_manifest(
        run_dir,
        {"environment": "soil", "repeat": 0, "status": status, "best_id": "r00-g002-i01", "best_fitness": 1.25},
    )
    pd.DataFrame(
        {
            "generation": [0, 1, 2],
            "best": [3.0, 2.0, 1.25],
            "mean": [4.0, 3.0, 2.0],
            "worst": [6.0, 5.0, 4.0],
            "stddev": [1.0, 1.0, 1.0],
            "reject_count": [2, 1, 0],
            "best_voxel_count": [300, 310, 320],
        }
    ).to_csv(run_dir / STATS_CSV, index=False)
    pd.DataFrame(
        {
            "id": ["r00-g001-i03", "r00-g002-i01"],
            "fitness": [2.5, 1.25],
            "tau_per_step": [2.0, 1.0],
            "delta": [4.0, 3.9],
            "voxel_count": [330, 320],
            "rejected": [False, False],
        }
    ).to_csv(run_dir / FINAL_POPULATION_CSV, index=False)
    (run_dir / "meshes" / "r00-g002-i01.obj").write_text("v 0 0 0\n", encoding="ascii")
    return run_dir


def test_build_view_without_runs(tmp_path):
    selector, summary, figure, stats, population, mesh = app_module._build_view(str(tmp_path), None)

    assert selector["choices"] == []
    assert "No run selected" in summary
    assert figure is None
    assert stats == []
    assert population == []
    assert mesh is None


def test_build_view_picks_first_run_and_best_mesh(tmp_path):
    _make_run(tmp_path, "fluid-r00")
    _make_run(tmp_path, "soil-r00")

    selector, summary, figure, stats, population, mesh = app_module._build_view(str(tmp_path), "missing")

    assert selector["value"] == "fluid-r00"
    assert selector["choices"] == ["fluid-r00", "soil-r00"]
    assert "COMPLETE" in summary
    assert "run-ok" in summary
    assert figure is not None
    assert len(stats) == 3
    assert population[0][0] == "r00-g002-i01"
    assert mesh is not None and mesh.endswith("r00-g002-i01.obj")


def test_incomplete_marker_overrides_status(tmp_path):
    run_dir = _make_run(tmp_path)
    (run_dir / INCOMPLETE_MARKER).write_text("", encoding="utf-8")

    summary = app_module._render_summary(run_dir)

    assert "INCOMPLETE" in summary
    assert "run-bad" in summary


def test_refresh_clears_status(tmp_path):
    _make_run(tmp_path)

    result = app_module._refresh(str(tmp_path), None)

    assert len(result) == 7
    assert result[-1] == ""


def test_select_leg_from_table_loads_mesh(tmp_path):
    _make_run(tmp_path)
    rows = [["r00-g002-i01", 1.25], ["r00-g001-i03", 2.5]]

    mesh, status = app_module._select_leg_from_table(str(tmp_path), "soil-r00", rows, _FakeSelectEvent((0, 1)))
    assert mesh.endswith("r00-g002-i01.obj")
    assert status == ""

    mesh, status = app_module._select_leg_from_table(str(tmp_path), "soil-r00", rows, _FakeSelectEvent((1, 0)))
    assert mesh is None
    assert "No mesh exported for r00-g001-i03" in status


def test_select_leg_out_of_range_row(tmp_path):
    mesh, status = app_module._select_leg_from_table(str(tmp_path), None, [], _FakeSelectEvent((3, 0)))

    assert mesh is None
    assert status == "Select a leg row."


def test_ui_contains_mesh_viewer():
    components = app_module.demo.config.get("components", [])

    assert any(component.get("type") == "model3d" for component in components)
