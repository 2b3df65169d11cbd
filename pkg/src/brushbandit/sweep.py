"""Monte Carlo grid sweep over the burden-cost weights, with reporting.

Every (effect-shrink E, xi1, xi2) cell runs the same set of simulated
studies; per-trial criterion values are kept alongside the aggregates so
reports can be recomputed without re-simulation. By default all cells
share per-trial environment randomness (common random numbers), which
sharpens between-cell comparisons; strict independence is a flag away.

Outputs per (E, criterion): a CSV matrix (xi1 rows, xi2 columns, header
row and column carrying the grid values; the source of truth) and an SVG
heatmap with the best cell outlined. Ties go to the smallest xi1, then
the smallest xi2.
"""

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

from .bandit import PriorSpec
from .environment import UserEnvModel
from .study import (
    StudyConfig,
    mean_cumulative_quality,
    percentile25_cumulative_quality,
    run_study,
)

_CRITERION_NAMES = {1: "mean cumulative quality", 2: "p25 cumulative quality"}
_CRITERION_CMAPS = {1: "Blues", 2: "Purples"}
_SVG_HASHSALT = "brushbandit"


@dataclass(frozen=True)
class SweepConfig:
    xi1_grid: tuple[float, ...]
    xi2_grid: tuple[float, ...]
    e_values: tuple[float, ...] = (0.0, 0.5, 0.8)
    mc_trials: int = 100
    study: StudyConfig = field(default_factory=StudyConfig)
    common_random_numbers: bool = True
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "xi1_grid", tuple(float(x) for x in self.xi1_grid))
        object.__setattr__(self, "xi2_grid", tuple(float(x) for x in self.xi2_grid))
        object.__setattr__(self, "e_values", tuple(float(e) for e in self.e_values))
        if not self.xi1_grid or not self.xi2_grid or not self.e_values:
            raise ValueError("xi1_grid, xi2_grid, and e_values must be nonempty")
        if any(x < 0 for x in self.xi1_grid + self.xi2_grid):
            raise ValueError("cost weights must be nonnegative")
        if self.mc_trials < 1 or self.workers < 1:
            raise ValueError("mc_trials and workers must be positive")


@dataclass
class CellStats:
    """Per-trial criterion values for one grid cell, plus aggregates."""

    xi1: float
    xi2: float
    criterion1: np.ndarray
    criterion2: np.ndarray

    def mean(self, criterion: int) -> float:
        return float(self._values(criterion).mean())

    def std_error(self, criterion: int) -> float:
        v = self._values(criterion)
        if len(v) < 2:
            return 0.0
        return float(v.std(ddof=1) / np.sqrt(len(v)))

    def _values(self, criterion: int) -> np.ndarray:
        if criterion == 1:
            return self.criterion1
        if criterion == 2:
            return self.criterion2
        raise ValueError(f"criterion must be 1 or 2, got {criterion}")


@dataclass
class SweepResult:
    config: SweepConfig
    cells: dict[float, dict[tuple[int, int], CellStats]]

    def cell(self, e: float, xi1: float, xi2: float) -> CellStats:
        i = self.config.xi1_grid.index(float(xi1))
        j = self.config.xi2_grid.index(float(xi2))
        return self.cells[float(e)][(i, j)]

    def mean_matrix(self, e: float, criterion: int) -> np.ndarray:
        g1, g2 = self.config.xi1_grid, self.config.xi2_grid
        out = np.zeros((len(g1), len(g2)))
        for (i, j), stats in self.cells[float(e)].items():
            out[i, j] = stats.mean(criterion)
        return out

    def argmax(self, e: float, criterion: int) -> tuple[float, float]:
        """Best (xi1, xi2); ties broken by smallest xi1 then smallest xi2."""
        ranked = sorted(
            self.cells[float(e)].values(),
            key=lambda c: (-c.mean(criterion), c.xi1, c.xi2),
        )
        best = ranked[0]
        return best.xi1, best.xi2


def _float_bits(x: float) -> int:
    return int(np.float64(x).view(np.uint64))


def _cell_trial_key(
    config: SweepConfig, e: float, xi1: float, xi2: float, trial: int
) -> tuple[int, ...]:
    """Stream key for one (cell, trial) task.

    Under common random numbers every cell shares the per-trial key.
    Otherwise the key folds in the cell's parameter values (not its grid
    position), so results are invariant to enumeration order.
    """
    if config.common_random_numbers:
        return (config.study.master_seed, trial)
    return (
        config.study.master_seed, trial,
        _float_bits(e), _float_bits(xi1), _float_bits(xi2),
    )


class SweepCellError(RuntimeError):
    """A study inside a sweep failed; the message names the cell and trial."""


def _run_one(args) -> tuple[tuple[int, int, int, int], float, float]:
    (task_key, study_config, pool, prior, stream_key) = args
    try:
        result = run_study(study_config, pool, prior, stream_key=stream_key)
    except Exception as exc:
        cp = study_config.cost_params
        raise SweepCellError(
            f"cell E={study_config.effect_shrink_e:g} xi1={cp.xi1:g} "
            f"xi2={cp.xi2:g}, trial {task_key[3]}: {exc}"
        ) from exc
    return (
        task_key,
        mean_cumulative_quality(result),
        percentile25_cumulative_quality(result),
    )


def run_sweep(
    config: SweepConfig,
    user_models: list[UserEnvModel],
    prior: PriorSpec | None = None,
) -> SweepResult:
    """Run every (E, xi1, xi2) cell for ``mc_trials`` independent studies.

    Results depend only on the configuration and the master seed, never
    on enumeration order or worker count.
    """
    prior = prior if prior is not None else PriorSpec()
    tasks = []
    for e_idx, e in enumerate(config.e_values):
        for i, xi1 in enumerate(config.xi1_grid):
            for j, xi2 in enumerate(config.xi2_grid):
                study = replace(
                    config.study,
                    cost_params=replace(config.study.cost_params, xi1=xi1, xi2=xi2),
                    effect_shrink_e=e,
                )
                for trial in range(config.mc_trials):
                    tasks.append(
                        (
                            (e_idx, i, j, trial),
                            study,
                            user_models,
                            prior,
                            _cell_trial_key(config, e, xi1, xi2, trial),
                        )
                    )

    outcomes: dict[tuple[int, int, int, int], tuple[float, float]] = {}
    if config.workers == 1:
        for task in tasks:
            key, c1, c2 = _run_one(task)
            outcomes[key] = (c1, c2)
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool_exec:
            for key, c1, c2 in pool_exec.map(_run_one, tasks, chunksize=4):
                outcomes[key] = (c1, c2)

    cells: dict[float, dict[tuple[int, int], CellStats]] = {}
    for e_idx, e in enumerate(config.e_values):
        cells[e] = {}
        for i, xi1 in enumerate(config.xi1_grid):
            for j, xi2 in enumerate(config.xi2_grid):
                c1 = np.array(
                    [outcomes[(e_idx, i, j, t)][0] for t in range(config.mc_trials)]
                )
                c2 = np.array(
                    [outcomes[(e_idx, i, j, t)][1] for t in range(config.mc_trials)]
                )
                cells[e][(i, j)] = CellStats(xi1, xi2, c1, c2)
    return SweepResult(config=config, cells=cells)


# -- output artifacts --------------------------------------------------------


def heatmap_stem(outdir: str | Path, e: float, criterion: int) -> Path:
    return Path(outdir) / f"criterion{criterion}_E{e:g}"


def heatmap_csv_path(outdir: str | Path, e: float, criterion: int) -> Path:
    stem = heatmap_stem(outdir, e, criterion)
    return stem.parent / (stem.name + ".csv")


def emit_heatmap(
    result: SweepResult, e: float, criterion: int, stem: str | Path
) -> list[Path]:
    """Write ``<stem>.csv`` and ``<stem>.svg`` for one (E, criterion) grid.

    The CSV matrix is authoritative; the SVG reproduces it with the
    argmax cell outlined.
    """
    stem = Path(stem)
    matrix = result.mean_matrix(e, criterion)
    g1, g2 = result.config.xi1_grid, result.config.xi2_grid
    best_xi1, best_xi2 = result.argmax(e, criterion)
    bi, bj = g1.index(best_xi1), g2.index(best_xi2)

    # stems carry dots (E0.5), so build names by concatenation rather
    # than with_suffix
    csv_path = stem.parent / (stem.name + ".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["xi1\\xi2"] + [f"{x:g}" for x in g2])
        for i, xi1 in enumerate(g1):
            writer.writerow([f"{xi1:g}"] + [f"{v:.6g}" for v in matrix[i]])

    svg_path = stem.parent / (stem.name + ".svg")
    fig = Figure(figsize=(1.2 + 0.55 * len(g2), 1.0 + 0.55 * len(g1)))
    ax = fig.add_subplot(1, 1, 1)
    im = ax.imshow(matrix, cmap=_CRITERION_CMAPS[criterion], aspect="auto")
    ax.set_xticks(range(len(g2)), [f"{x:g}" for x in g2])
    ax.set_yticks(range(len(g1)), [f"{x:g}" for x in g1])
    ax.set_xlabel("xi2")
    ax.set_ylabel("xi1")
    ax.set_title(f"{_CRITERION_NAMES[criterion]} (E={e:g})")
    ax.add_patch(
        Rectangle(
            (bj - 0.5, bi - 0.5), 1.0, 1.0,
            fill=False, edgecolor="red", linewidth=2.0,
        )
    )
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    with mpl.rc_context({"svg.hashsalt": _SVG_HASHSALT}):
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
    return [csv_path, svg_path]


def write_trials_csv(result: SweepResult, path: str | Path):
    """Per-trial criterion values, enough to recompute every aggregate."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["E", "xi1", "xi2", "trial", "criterion1", "criterion2"])
        for e in result.config.e_values:
            for stats in result.cells[e].values():
                for t in range(len(stats.criterion1)):
                    writer.writerow(
                        [f"{e:g}", f"{stats.xi1:g}", f"{stats.xi2:g}", t,
                         repr(float(stats.criterion1[t])),
                         repr(float(stats.criterion2[t]))]
                    )


def write_summary_csv(result: SweepResult, path: str | Path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["E", "criterion", "best_xi1", "best_xi2", "best_mean", "best_se"]
        )
        for e in result.config.e_values:
            for criterion in (1, 2):
                xi1, xi2 = result.argmax(e, criterion)
                stats = result.cell(e, xi1, xi2)
                writer.writerow(
                    [f"{e:g}", criterion, f"{xi1:g}", f"{xi2:g}",
                     f"{stats.mean(criterion):.6g}",
                     f"{stats.std_error(criterion):.6g}"]
                )


def write_sweep_outputs(result: SweepResult, outdir: str | Path) -> list[Path]:
    """Emit the full artifact set: trials, summary, and all heatmaps."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    trials = outdir / "trials.csv"
    write_trials_csv(result, trials)
    written.append(trials)
    summary = outdir / "summary.csv"
    write_summary_csv(result, summary)
    written.append(summary)
    for e in result.config.e_values:
        for criterion in (1, 2):
            stem = heatmap_stem(outdir, e, criterion)
            written.extend(emit_heatmap(result, e, criterion, stem))
    return written


def load_trials_csv(path: str | Path) -> SweepResult:
    """Rebuild a SweepResult from a persisted per-trial CSV."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                (
                    float(row["E"]), float(row["xi1"]), float(row["xi2"]),
                    int(row["trial"]), float(row["criterion1"]),
                    float(row["criterion2"]),
                )
            )
    if not rows:
        raise ValueError(f"no trial rows found in {path}")
    e_values = tuple(sorted({r[0] for r in rows}))
    xi1_grid = tuple(sorted({r[1] for r in rows}))
    xi2_grid = tuple(sorted({r[2] for r in rows}))
    n_trials = max(r[3] for r in rows) + 1
    config = SweepConfig(
        xi1_grid=xi1_grid, xi2_grid=xi2_grid, e_values=e_values,
        mc_trials=n_trials,
    )
    cells: dict[float, dict[tuple[int, int], CellStats]] = {
        e: {} for e in e_values
    }
    for e in e_values:
        for i, xi1 in enumerate(xi1_grid):
            for j, xi2 in enumerate(xi2_grid):
                sel = sorted(
                    (r for r in rows if r[0] == e and r[1] == xi1 and r[2] == xi2),
                    key=lambda r: r[3],
                )
                if len(sel) != n_trials:
                    raise ValueError(
                        f"cell E={e:g} xi1={xi1:g} xi2={xi2:g} has "
                        f"{len(sel)} trials, expected {n_trials}"
                    )
                cells[e][(i, j)] = CellStats(
                    xi1, xi2,
                    np.array([r[4] for r in sel]),
                    np.array([r[5] for r in sel]),
                )
    return SweepResult(config=config, cells=cells)


def report(outdir: str | Path) -> list[Path]:
    """Re-emit summary and heatmaps from the persisted per-trial CSV."""
    outdir = Path(outdir)
    result = load_trials_csv(outdir / "trials.csv")
    written = []
    summary = outdir / "summary.csv"
    write_summary_csv(result, summary)
    written.append(summary)
    for e in result.config.e_values:
        for criterion in (1, 2):
            stem = heatmap_stem(outdir, e, criterion)
            written.extend(emit_heatmap(result, e, criterion, stem))
    return written
