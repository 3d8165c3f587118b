from __future__ import annotations

import html
import json
import os
from pathlib import Path
from typing import Any

import gradio as gr
import pandas as pd
from matplotlib.figure import Figure

from legforge.analytics import STATS_COLUMNS
from legforge.config import default_output_dir
from legforge.experiment import FINAL_POPULATION_CSV, INCOMPLETE_MARKER, MANIFEST, STATS_CSV

POPULATION_COLUMNS = ["id", "fitness", "tau_per_step", "delta", "voxel_count", "rejected"]


# ---------------------------------------------------------------------------
# Run discovery
# ---------------------------------------------------------------------------


def _run_names(runs_dir: Path) -> list[str]:
    if not runs_dir.is_dir():
        return []
    return sorted(path.parent.name for path in runs_dir.glob(f"*/{MANIFEST}"))


def _read_manifest(run_dir: Path) -> dict[str, Any]:
    try:
        value = json.loads((run_dir / MANIFEST).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return {}
    return value if isinstance(value, dict) else {}


def _read_csv(path: Path) -> pd.DataFrame | None:
    if not path.exists():
        return None
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError):
        return None


# ---------------------------------------------------------------------------
# Rendering helpers
# ---------------------------------------------------------------------------


def _status_badge(manifest: dict[str, Any], run_dir: Path) -> tuple[str, str]:
    status = str(manifest.get("status", "unknown"))
    if (run_dir / INCOMPLETE_MARKER).exists() and status == "complete":
        status = "incomplete"
    css = {"complete": "run-ok", "running": "run-busy"}.get(status, "run-bad")
    return status.upper(), css


def _kv_row(key: str, value: Any) -> str:
    return (
        "<div class='run-kv'>"
        f"<span class='run-k'>{html.escape(str(key))}</span>"
        f"<span class='run-v'>{html.escape(str(value))}</span>"
        "</div>"
    )


def _render_summary(run_dir: Path | None) -> str:
    if run_dir is None:
        return "<div class='run-empty'>No run selected.</div>"
    manifest = _read_manifest(run_dir)
    if not manifest:
        return f"<div class='run-empty'>{html.escape(run_dir.name)}: manifest missing or unreadable.</div>"
    label, css = _status_badge(manifest, run_dir)
    rows = "".join(
        _kv_row(key, manifest.get(key, "-"))
        for key in (
            "environment",
            "repeat",
            "master_seed",
            "generations_completed",
            "evaluations",
            "best_id",
            "best_fitness",
            "best_voxel_count",
            "version",
        )
    )
    error = _kv_row("error", manifest["error"]) if manifest.get("error") else ""
    return (
        "<div class='run-card'>"
        f"<div class='run-title'>{html.escape(run_dir.name)} <b class='{css}'>{label}</b></div>"
        f"{rows}{error}"
        "</div>"
    )


def _stats_rows(run_dir: Path | None) -> list[list[Any]]:
    frame = _read_csv(run_dir / STATS_CSV) if run_dir else None
    if frame is None:
        return []
    return frame.reindex(columns=list(STATS_COLUMNS)).values.tolist()


def _population_rows(run_dir: Path | None) -> list[list[Any]]:
    frame = _read_csv(run_dir / FINAL_POPULATION_CSV) if run_dir else None
    if frame is None:
        return []
    return frame.reindex(columns=POPULATION_COLUMNS).sort_values("fitness", kind="stable").values.tolist()


def _progress_figure(run_dir: Path | None) -> Figure | None:
    frame = _read_csv(run_dir / STATS_CSV) if run_dir else None
    if frame is None or frame.empty:
        return None
    fig = Figure(figsize=(6, 3.5))
    ax = fig.subplots()
    for name, colour in (("best", "tab:green"), ("mean", "tab:blue"), ("worst", "tab:red")):
        ax.plot(frame["generation"], frame[name], color=colour, label=name)
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.legend()
    fig.tight_layout()
    return fig


def _mesh_path(run_dir: Path | None, leg_id: str | None) -> str | None:
    if run_dir is None or not leg_id:
        return None
    path = run_dir / "meshes" / f"{leg_id}.obj"
    return str(path) if path.exists() else None


# ---------------------------------------------------------------------------
# View builder (single source of truth)
# ---------------------------------------------------------------------------


def _resolve(runs_dir_text: str, run_name: str | None) -> tuple[Path, list[str], str | None]:
    runs_dir = Path(runs_dir_text.strip() or default_output_dir())
    names = _run_names(runs_dir)
    resolved = run_name if run_name in names else (names[0] if names else None)
    return runs_dir, names, resolved


def _build_view(runs_dir_text: str, run_name: str | None):
    runs_dir, names, resolved = _resolve(runs_dir_text, run_name)
    run_dir = runs_dir / resolved if resolved else None
    population = _population_rows(run_dir)
    best_id = population[0][0] if population else None
    return (
        gr.update(choices=names, value=resolved),
        _render_summary(run_dir),
        _progress_figure(run_dir),
        _stats_rows(run_dir),
        population,
        _mesh_path(run_dir, best_id),
    )


# ---------------------------------------------------------------------------
# Event handlers
# ---------------------------------------------------------------------------


def _refresh(runs_dir_text: str, run_name: str | None):
    selector, summary, figure, stats, population, mesh = _build_view(runs_dir_text, run_name)
    return selector, summary, figure, stats, population, mesh, ""


def _select_leg_from_table(runs_dir_text: str, run_name: str | None, rows: Any, evt: gr.SelectData):
    if isinstance(rows, pd.DataFrame):
        rows = rows.values.tolist()
    row_index = evt.index[0] if isinstance(evt.index, (list, tuple)) else evt.index
    if not isinstance(row_index, int) or row_index < 0 or row_index >= len(rows or []):
        return None, "Select a leg row."
    leg_id = str(rows[row_index][0])
    runs_dir, _, resolved = _resolve(runs_dir_text, run_name)
    mesh = _mesh_path(runs_dir / resolved if resolved else None, leg_id)
    return mesh, "" if mesh else f"No mesh exported for {leg_id}."


# ---------------------------------------------------------------------------
# CSS (theme-aware)
# ---------------------------------------------------------------------------

CSS = """
#main-row { align-items: stretch !important; }
.run-card {
  padding: 8px 12px; border-radius: 8px;
  border: 1px solid var(--border-color-primary);
  background: color-mix(in srgb, var(--body-text-color) 3%, transparent);
}
.run-title { font-weight: 600; margin-bottom: 6px; }
.run-kv { display: grid; grid-template-columns: 150px 1fr; gap: 8px; padding: 2px 0; font-size: 12px; }
.run-k { opacity: 0.65; font-family: monospace; }
.run-v { word-break: break-word; }
.run-empty { padding: 20px; text-align: center; opacity: 0.5; }
.run-ok { color: #2ea043; }
.run-busy { color: #d29922; }
.run-bad { color: #f85149; }
"""

# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------

with gr.Blocks(title="legforge") as demo:
    gr.Markdown("## legforge\nEvolved legs &middot; Fitness progression &middot; Printable meshes")

    with gr.Row(elem_id="main-row"):
        # ---- Left: runs ----
        with gr.Column(scale=3):
            gr.Markdown("#### Runs")
            runs_dir_box = gr.Textbox(value=str(default_output_dir()), label="Output directory")
            run_selector = gr.Dropdown(choices=[], value=None, label="Run")
            refresh_button = gr.Button("Refresh", variant="secondary")
            summary_html = gr.HTML()

        # ---- Center: progression ----
        with gr.Column(scale=5):
            gr.Markdown("#### Fitness")
            progress_plot = gr.Plot(label="Best / mean / worst")
            stats_table = gr.Dataframe(
                headers=list(STATS_COLUMNS),
                interactive=False,
                column_count=(len(STATS_COLUMNS), "fixed"),
                value=[],
            )

        # ---- Right: final population ----
        with gr.Column(scale=4):
            gr.Markdown("#### Final population")
            population_table = gr.Dataframe(
                headers=POPULATION_COLUMNS,
                interactive=False,
                column_count=(len(POPULATION_COLUMNS), "fixed"),
                value=[],
            )
            leg_view = gr.Model3D(label="Leg mesh")

    status_text = gr.Markdown()

    _core = [run_selector, summary_html, progress_plot, stats_table, population_table, leg_view, status_text]

    demo.load(fn=_refresh, inputs=[runs_dir_box, run_selector], outputs=_core, show_progress="hidden")
    refresh_button.click(fn=_refresh, inputs=[runs_dir_box, run_selector], outputs=_core, show_progress="hidden")
    run_selector.input(fn=_refresh, inputs=[runs_dir_box, run_selector], outputs=_core, show_progress="hidden")
    runs_dir_box.submit(fn=_refresh, inputs=[runs_dir_box, run_selector], outputs=_core, show_progress="hidden")
    population_table.select(
        fn=_select_leg_from_table,
        inputs=[runs_dir_box, run_selector, population_table],
        outputs=[leg_view, status_text],
        show_progress="hidden",
    )

if __name__ == "__main__":
    demo.launch(
        server_name=os.getenv("GRADIO_SERVER_NAME", "0.0.0.0"),
        server_port=int(os.getenv("GRADIO_SERVER_PORT", "7860")),
        theme=gr.themes.Soft(),
        css=CSS,
        show_error=True,
    )
