from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from sqlalchemy import create_engine, text

from legforge.analytics import GenerationStats
from legforge.ga import Individual
from legforge.genome import serialize

_IDENTIFIER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

LEDGER_FILENAME = "ledger.db"


def _validate_identifier(value: str, field_name: str) -> str:
    if not _IDENTIFIER_RE.fullmatch(value):
        raise ValueError(f"Invalid {field_name}: {value!r}")
    return value


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class LedgerTables:
    individuals: str = "individuals"
    generation_stats: str = "generation_stats"

    def __post_init__(self) -> None:
        _validate_identifier(self.individuals, "table name")
        _validate_identifier(self.generation_stats, "table name")


class RunLedger:
    """SQLite record of every evaluated individual and every generation summary of one run."""

    def __init__(self, path: Path, tables: LedgerTables | None = None) -> None:
        self._path = Path(path)
        self._tables = tables or LedgerTables()
        self._lock = threading.Lock()
        self._engine = create_engine(f"sqlite:///{self._path}", future=True)
        self._ensure_tables()

    @classmethod
    def in_run_dir(cls, run_dir: Path) -> RunLedger:
        return cls(Path(run_dir) / LEDGER_FILENAME)

    @property
    def path(self) -> Path:
        return self._path

    def record_individuals(self, generation: int, individuals: list[Individual] | tuple[Individual, ...]) -> None:
        rows = []
        for ind in individuals:
            result = ind.result
            rows.append(
                {
                    "generation": generation,
                    "individual_id": ind.id,
                    "born": ind.born,
                    "fitness": result.fitness if result else None,
                    "tau": result.tau if result else None,
                    "delta": result.delta if result else None,
                    "voxel_count": result.voxel_count if result else None,
                    "rejected": int(ind.rejected),
                    "reason": result.reason if result else "",
                    "lineage": ",".join(ind.genome.lineage),
                    "genome_json": serialize(ind.genome),
                }
            )
        if not rows:
            return
        with self._lock:
            with self._engine.begin() as conn:
                conn.execute(
                    text(
                        f"""
                        INSERT INTO "{self._tables.individuals}"
                            (generation, individual_id, born, fitness, tau, delta, voxel_count,
                             rejected, reason, lineage, genome_json)
                        VALUES
                            (:generation, :individual_id, :born, :fitness, :tau, :delta, :voxel_count,
                             :rejected, :reason, :lineage, :genome_json)
                        """
                    ),
                    rows,
                )

    def record_stats(self, stats: GenerationStats) -> None:
        with self._lock:
            with self._engine.begin() as conn:
                conn.execute(
                    text(
                        f"""
                        INSERT OR REPLACE INTO "{self._tables.generation_stats}"
                            (generation, best, mean, worst, stddev, reject_count, best_voxel_count)
                        VALUES
                            (:generation, :best, :mean, :worst, :stddev, :reject_count, :best_voxel_count)
                        """
                    ),
                    {
                        "generation": stats.generation,
                        "best": _finite_or_none(stats.best),
                        "mean": _finite_or_none(stats.mean),
                        "worst": _finite_or_none(stats.worst),
                        "stddev": _finite_or_none(stats.stddev),
                        "reject_count": stats.reject_count,
                        "best_voxel_count": stats.best_voxel_count,
                    },
                )

    def generations(self) -> list[int]:
        sql = text(f'SELECT generation FROM "{self._tables.generation_stats}" ORDER BY generation ASC')
        with self._engine.connect() as conn:
            return [int(row[0]) for row in conn.execute(sql).fetchall()]

    def individuals(self, generation: int | None = None) -> list[dict[str, Any]]:
        where = "WHERE generation = :generation" if generation is not None else ""
        sql = text(
            f"""
            SELECT generation, individual_id, born, fitness, tau, delta, voxel_count, rejected, reason, lineage,
                   genome_json
            FROM "{self._tables.individuals}"
            {where}
            ORDER BY generation ASC, id ASC
            """
        )
        with self._engine.connect() as conn:
            rows = conn.execute(sql, {"generation": generation}).mappings().fetchall()
        return [{**row, "rejected": bool(row["rejected"])} for row in rows]

    def evaluation_count(self) -> int:
        """Distinct individuals ever recorded; survivors repeat across generations but count once."""
        sql = text(f'SELECT COUNT(DISTINCT individual_id) FROM "{self._tables.individuals}"')
        with self._engine.connect() as conn:
            return int(conn.execute(sql).scalar_one())

    def _ensure_tables(self) -> None:
        self._path.parent.mkdir(parents=True, exist_ok=True)
        statements = [
            f"""
            CREATE TABLE IF NOT EXISTS "{self._tables.individuals}" (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                generation INTEGER NOT NULL,
                individual_id TEXT NOT NULL,
                born INTEGER NOT NULL,
                fitness REAL,
                tau REAL,
                delta REAL,
                voxel_count INTEGER,
                rejected INTEGER NOT NULL,
                reason TEXT NOT NULL,
                lineage TEXT NOT NULL,
                genome_json TEXT NOT NULL,
                UNIQUE (generation, individual_id)
            )
            """,
            f"""
            CREATE INDEX IF NOT EXISTS "idx_{self._tables.individuals}_generation"
            ON "{self._tables.individuals}" (generation)
            """,
            f"""
            CREATE TABLE IF NOT EXISTS "{self._tables.generation_stats}" (
                generation INTEGER PRIMARY KEY,
                best REAL,
                mean REAL,
                worst REAL,
                stddev REAL,
                reject_count INTEGER NOT NULL,
                best_voxel_count INTEGER NOT NULL
            )
            """,
        ]
        with self._engine.begin() as conn:
            for statement in statements:
                conn.execute(text(statement))

    def dispose(self) -> None:
        self._engine.dispose()
