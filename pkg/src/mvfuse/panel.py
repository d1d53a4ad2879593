"""Data model for multi-subject panels: ingestion, validation, lagged designs.

Index conventions (all 0-based except the lag):

* variable ``i`` in ``0..d-1`` is the response equation,
* coefficient ``j`` in ``0..dp-1`` indexes the lagged design, lag-major:
  ``j = (lag - 1) * d + m`` where ``m`` is the source variable,
* the flat path index over all equations is ``i * dp + j`` (``q = d * d * p``).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_EXTRA_ROWS = 10


class ValidationError(ValueError):
    """Input data or configuration failed validation."""


class NumericalError(RuntimeError):
    """A numerical routine hit a degenerate configuration."""


@dataclass(frozen=True)
class SubjectPanel:
    subject_id: str
    data: np.ndarray
    variables: tuple[str, ...] = ()

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2:
            raise ValidationError(f"subject {self.subject_id}: data must be 2-D, got shape {data.shape}")
        bad = np.argwhere(~np.isfinite(data))
        if len(bad):
            r, c = bad[0]
            raise ValidationError(
                f"subject {self.subject_id}: non-finite value at row {r + 1}, column {c + 1}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if not self.variables:
            object.__setattr__(self, "variables", tuple(f"x{m + 1}" for m in range(data.shape[1])))

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class StudyConfig:
    p: int = 1
    K: int = 2
    center: bool = True
    threshold_kind: str = "hard"
    alpha: float = 0.05
    seed: int = 0
    n_eta: int = 10
    c0_grid: tuple[float, ...] = tuple(np.round(np.linspace(0.1, 1.0, 10), 10))
    cK_grid: tuple[float, ...] = tuple(np.round(np.linspace(0.5, 1.0, 6), 10))
    holdout: float = 0.2

    def __post_init__(self):
        if self.p < 1:
            raise ValidationError(f"lag order p must be >= 1, got {self.p}")
        if self.K < 2:
            raise ValidationError(f"a study needs K >= 2 subjects, got {self.K}")
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.threshold_kind not in ("hard", "soft"):
            raise ValidationError(f"threshold_kind must be 'hard' or 'soft', got {self.threshold_kind!r}")
        object.__setattr__(self, "c0_grid", tuple(float(c) for c in self.c0_grid))
        object.__setattr__(self, "cK_grid", tuple(float(c) for c in self.cK_grid))


@dataclass(frozen=True)
class RegressionView:
    """Response for one equation and the shared lagged design."""

    Y: np.ndarray
    X: np.ndarray

    @property
    def N(self) -> int:
        return self.X.shape[0]


@dataclass
class PathDecomposition:
    """Common/unique split of the K subjects' transition coefficients.

    All path vectors have length ``q = d * d * p`` in flat order (see module doc).
    ``inlier_mask`` has shape ``(d, dp, K)``; ``eta`` has shape ``(d, dp)``.
    """

    d: int
    p: int
    common_raw: np.ndarray
    unique_raw: np.ndarray  # (K, q)
    inlier_mask: np.ndarray
    eta: np.ndarray
    common_sparse: np.ndarray | None = None
    unique_sparse: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.unique_raw.shape[0]

    def individual_sparse(self) -> np.ndarray:
        """Reconstructed sparse subject coefficients, shape ``(K, q)``."""
        return self.common_sparse[None, :] + self.unique_sparse

    def to_dict(self) -> dict:
        out = {
            "d": self.d,
            "p": self.p,
            "common_raw": self.common_raw.tolist(),
            "unique_raw": self.unique_raw.tolist(),
            "inlier_mask": self.inlier_mask.astype(int).tolist(),
            "eta": self.eta.tolist(),
            "meta": self.meta,
        }
        if self.common_sparse is not None:
            out["common_sparse"] = self.common_sparse.tolist()
            out["unique_sparse"] = self.unique_sparse.tolist()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "PathDecomposition":
        sparse = obj.get("common_sparse")
        return cls(
            d=int(obj["d"]),
            p=int(obj["p"]),
            common_raw=np.asarray(obj["common_raw"], dtype=float),
            unique_raw=np.asarray(obj["unique_raw"], dtype=float),
            inlier_mask=np.asarray(obj["inlier_mask"], dtype=bool),
            eta=np.asarray(obj["eta"], dtype=float),
            common_sparse=None if sparse is None else np.asarray(sparse, dtype=float),
            unique_sparse=None if sparse is None else np.asarray(obj["unique_sparse"], dtype=float),
            meta=obj.get("meta", {}),
        )


def vec_index(j: int, d: int, p: int) -> tuple[int, int]:
    """Map a design column ``j`` to ``(lag, source)`` with lag in ``1..p``."""
    if not 0 <= j < d * p:
        raise IndexError(f"coefficient index {j} out of range for d={d}, p={p}")
    return j // d + 1, j % d


def design_index(lag: int, source: int, d: int, p: int) -> int:
    """Inverse of :func:`vec_index`."""
    if not (1 <= lag <= p and 0 <= source < d):
        raise IndexError(f"(lag={lag}, source={source}) out of range for d={d}, p={p}")
    return (lag - 1) * d + source


def lagged_design(data: np.ndarray, p: int, center: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Responses ``(N, d)`` and lagged design ``(N, dp)`` with ``N = T - p``.

    Row ``t`` of the design is ``(x_{t-1}', ..., x_{t-p}')``.
    """
    data = np.asarray(data, dtype=float)
    T, d = data.shape
    if T <= p:
        raise ValidationError(f"series of length {T} too short for lag order {p}")
    if center:
        data = data - data.mean(axis=0)
    N = T - p
    Y = data[p:]
    X = np.empty((N, d * p))
    for lag in range(1, p + 1):
        X[:, (lag - 1) * d: lag * d] = data[p - lag: T - lag]
    return Y, X


def build_regression_view(panel: SubjectPanel, i: int, p: int, center: bool = True) -> RegressionView:
    if not 0 <= i < panel.d:
        raise IndexError(f"variable index {i} out of range for d={panel.d}")
    Y, X = lagged_design(panel.data, p, center)
    return RegressionView(Y=Y[:, i].copy(), X=X)


def validate_study(panels: list[SubjectPanel], p: int) -> None:
    if not panels:
        raise ValidationError("study has no subjects")
    d = panels[0].d
    for panel in panels:
        if panel.d != d:
            raise ValidationError(f"dimension mismatch ({panel.subject_id}: d={panel.d}, expected {d})")
        if panel.T <= p + MIN_EXTRA_ROWS:
            raise ValidationError(
                f"subject {panel.subject_id}: T={panel.T} too short (need T > p + {MIN_EXTRA_ROWS} = {p + MIN_EXTRA_ROWS})"
            )


def read_panel_csv(path: str | Path, subject_id: str) -> SubjectPanel:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"subject {subject_id}: empty CSV {path}") from None
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"subject {subject_id}: row {r} has {len(row)} fields, header has {len(header)}"
                )
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"subject {subject_id}: unparseable value {cell!r} at row {r}, column {c}"
                    ) from None
                if not math.isfinite(v):
                    raise ValidationError(f"subject {subject_id}: non-finite value at row {r}, column {c}")
                vals.append(v)
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return SubjectPanel(subject_id, data, tuple(h.strip() for h in header))


def write_panel_csv(panel: SubjectPanel, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(panel.variables)
        for row in panel.data:
            w.writerow([repr(float(v)) for v in row])


_CONFIG_KEYS = {"p", "center", "threshold_kind", "alpha", "seed", "n_eta", "c0_grid", "cK_grid", "holdout"}


def load_study(manifest_path: str | Path) -> tuple[list[SubjectPanel], StudyConfig]:
    manifest_path = Path(manifest_path)
    try:
        spec = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {manifest_path} is not valid JSON: {exc}") from None
    if "subjects" not in spec:
        raise ValidationError("manifest lacks a 'subjects' list")
    base = manifest_path.parent
    panels = []
    for entry in spec["subjects"]:
        path = Path(entry["path"])
        if not path.is_absolute():
            path = base / path
        panels.append(read_panel_csv(path, str(entry["id"])))
    kwargs = {k: spec[k] for k in _CONFIG_KEYS if k in spec}
    if "center" in kwargs:
        kwargs["center"] = bool(kwargs["center"])
    if "alpha" in spec:
        kwargs["alpha"] = float(spec["alpha"])
    config = StudyConfig(K=len(panels), **kwargs)
    validate_study(panels, config.p)
    return panels, config


def save_study(panels: list[SubjectPanel], config: StudyConfig, out_dir: str | Path,
               manifest_name: str = "manifest.json") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    subjects = []
    for panel in panels:
        fname = f"{panel.subject_id}.csv"
        write_panel_csv(panel, out_dir / fname)
        subjects.append({"id": panel.subject_id, "path": fname})
    manifest = {
        "subjects": subjects,
        "p": config.p,
        "center": config.center,
        "alpha": config.alpha,
        "threshold_kind": config.threshold_kind,
        "seed": config.seed,
        "n_eta": config.n_eta,
        "c0_grid": list(config.c0_grid),
        "cK_grid": list(config.cK_grid),
        "holdout": config.holdout,
    }
    path = out_dir / manifest_name
    path.write_text(json.dumps(manifest, indent=2))
    return path
