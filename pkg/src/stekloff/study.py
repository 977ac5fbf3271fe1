"""Refinement studies: cluster averages, convergence orders and tables."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .assembly import Formulation, assemble_A, build_dof_map, build_system
from .eigen import EigenRequest, EigenResult, cluster_eigenvalues, shift_invert_solve, write_spectrum_csv
from .femcore import MaterialField
from .mesh import Mesh, generate_cube_mesh, generate_lshape_mesh, read_msh

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid study configuration."""


# ----------------------------------------------------------------------------
# formulas


def cluster_average(values) -> complex:
    """Arithmetic mean of the eigenvalues of one cluster."""
    v = np.asarray(values, dtype=complex).ravel()
    if v.size == 0:
        raise ValueError("cannot average an empty cluster")
    return complex(v.mean())


def _ratio_order(num: float, den: float, n_new: float, n_old: float) -> float | None:
    if not (num > 0 and den > 0 and n_new > 0 and n_old > 0) or n_new == n_old:
        return None
    r = -math.log(num / den) / math.log(math.sqrt(n_new) / math.sqrt(n_old))
    return r if math.isfinite(r) else None


def order_relative(values, counts) -> list[float | None]:
    """Orders from three consecutive levels; ``None`` where undefined.

    ``r[l] = -log(|x_l - x_{l-1}| / |x_{l-1} - x_{l-2}|) / log(sqrt(N_l / N_{l-1}))``
    for ``l >= 2`` (zero-based); the first two entries are always ``None``.
    Entries of ``values`` may be ``None`` for failed levels.
    """
    if len(values) != len(counts):
        raise ValueError("values and counts differ in length")
    out: list[float | None] = [None] * len(values)
    for i in range(2, len(values)):
        a, b, c = values[i - 2], values[i - 1], values[i]
        if a is None or b is None or c is None:
            continue
        out[i] = _ratio_order(abs(c - b), abs(b - a), counts[i], counts[i - 1])
    return out


def order_exact(values, exact, counts) -> list[float | None]:
    """Orders against a known limit; the first entry is always ``None``."""
    if len(values) != len(counts):
        raise ValueError("values and counts differ in length")
    out: list[float | None] = [None] * len(values)
    for i in range(1, len(values)):
        a, b = values[i - 1], values[i]
        if a is None or b is None:
            continue
        out[i] = _ratio_order(abs(b - exact), abs(a - exact), counts[i], counts[i - 1])
    return out


def backsolve_limit(values, counts, order: float) -> float:
    """Limit ``x*`` for which two levels show exactly ``order`` (same-side errors)."""
    a, b = values
    rho = (math.sqrt(counts[1]) / math.sqrt(counts[0])) ** (-order)
    return (b - rho * a) / (1.0 - rho)


# ----------------------------------------------------------------------------
# configuration

_DOMAIN_KINDS = ("cube", "lshape", "msh")


def parse_eps(spec) -> MaterialField:
    """Permittivity from a number, ``{"default": x, "regions": {...}, "alpha": a}``
    or a plain ``{region: value}`` mapping."""
    if isinstance(spec, MaterialField):
        return spec
    if isinstance(spec, str):
        s = spec.strip()
        try:
            spec = float(s)
        except ValueError:
            try:
                spec = json.loads(s)
            except json.JSONDecodeError:
                raise ConfigError(f"cannot parse permittivity {s!r}") from None
    try:
        if isinstance(spec, bool):
            raise ConfigError("permittivity must be a number or an object")
        if isinstance(spec, (int, float)):
            return MaterialField.constant(float(spec))
        if isinstance(spec, dict):
            if set(spec) <= {"default", "regions", "alpha"} and spec:
                regions = {int(k): float(v) for k, v in spec.get("regions", {}).items()}
                alpha = spec.get("alpha")
                return MaterialField(regions, float(spec.get("default", 1.0)),
                                     None if alpha is None else float(alpha))
            return MaterialField({int(k): float(v) for k, v in spec.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid permittivity {spec!r}: {exc}") from None
    raise ConfigError(f"invalid permittivity {spec!r}")


@dataclass
class StudyConfig:
    """One refinement study over a single domain family.

    ``domain`` has exactly one key: ``cube`` or ``lshape`` (lists of
    subdivision counts) or ``msh`` (list of mesh paths, coarse to fine).
    ``clusters`` is ``{"gap": g}`` or ``{"sizes": [...]}``.  ``exact`` gives
    one limit per cluster (``null`` allowed) and switches ``orders`` to
    ``"exact"`` when left at ``"auto"``.
    """

    domain: dict
    kappa: float = 1.0
    eps: object = 1.0
    formulations: list[str] = field(default_factory=lambda: ["sh", "shplus"])
    nev: int = 8
    shift: float = -2.0
    which: str = "nearest-shift"
    clusters: dict = field(default_factory=lambda: {"gap": 0.05})
    exact: list | None = None
    orders: str = "auto"
    output: str = "out"
    seed: int = 0
    backend: str = "auto"
    tol: float = 1e-8
    title: str = ""

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "StudyConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        if "domain" not in data:
            raise ConfigError("missing required key 'domain'")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if base is not None:
            if "msh" in cfg.domain:
                cfg.domain = {"msh": [str(base / p) if not Path(p).is_absolute() else p for p in cfg.domain["msh"]]}
            if not Path(cfg.output).is_absolute():
                cfg.output = str(base / cfg.output)
        return cfg

    @classmethod
    def from_json(cls, path) -> "StudyConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        return cls.from_dict(data, base=path.parent)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def kind(self) -> str:
        return next(iter(self.domain))

    @property
    def levels(self) -> list:
        return list(self.domain[self.kind])

    @property
    def order_mode(self) -> str:
        if self.orders == "auto":
            return "exact" if self.exact is not None else "relative"
        return self.orders

    @property
    def material(self) -> MaterialField:
        return parse_eps(self.eps)

    def validate(self) -> None:
        if not isinstance(self.domain, dict) or len(self.domain) != 1 or self.kind not in _DOMAIN_KINDS:
            raise ConfigError(f"domain must have exactly one of the keys {', '.join(_DOMAIN_KINDS)}")
        levels = self.domain[self.kind]
        if not isinstance(levels, list) or not levels:
            raise ConfigError("domain levels must be a non-empty list")
        if self.kind in ("cube", "lshape"):
            if any(not isinstance(n, int) or isinstance(n, bool) or n < 1 for n in levels):
                raise ConfigError("built-in mesh levels must be positive integers")
            if self.kind == "lshape" and any(n % 2 for n in levels):
                raise ConfigError("lshape levels must be even")
            if sorted(levels) != levels or len(set(levels)) != len(levels):
                raise ConfigError("mesh levels must be strictly increasing")
        elif any(not isinstance(p, str) for p in levels):
            raise ConfigError("msh levels must be file paths")
        if not isinstance(self.kappa, (int, float)) or isinstance(self.kappa, bool) or not self.kappa > 0:
            raise ConfigError("kappa must be a positive number")
        try:
            self.material
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.formulations or not isinstance(self.formulations, list):
            raise ConfigError("formulations must be a non-empty list")
        try:
            forms = [Formulation.parse(f) for f in self.formulations]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if len(set(forms)) != len(forms):
            raise ConfigError("duplicate formulation")
        if not isinstance(self.nev, int) or self.nev < 1:
            raise ConfigError("nev must be a positive integer")
        if self.which not in ("nearest-shift", "smallest-magnitude"):
            raise ConfigError("which must be 'nearest-shift' or 'smallest-magnitude'")
        if not isinstance(self.clusters, dict) or len(self.clusters) != 1 or next(iter(self.clusters)) not in ("gap", "sizes"):
            raise ConfigError("clusters must be {'gap': g} or {'sizes': [...]}")
        if "sizes" in self.clusters:
            sizes = self.clusters["sizes"]
            if not isinstance(sizes, list) or not sizes or any(not isinstance(s, int) or s < 1 for s in sizes):
                raise ConfigError("cluster sizes must be positive integers")
            if sum(sizes) > self.nev:
                raise ConfigError(f"cluster sizes need {sum(sizes)} eigenvalues but nev is {self.nev}")
        elif not isinstance(self.clusters["gap"], (int, float)) or not self.clusters["gap"] > 0:
            raise ConfigError("cluster gap must be positive")
        if self.orders not in ("auto", "relative", "exact", "none"):
            raise ConfigError("orders must be auto, relative, exact or none")
        if self.order_mode == "exact":
            if self.exact is None:
                raise ConfigError("exact orders need the 'exact' limit values")
            if len(levels) < 2:
                raise ConfigError("exact orders need at least 2 mesh levels")
        if self.exact is not None and (
            not isinstance(self.exact, list) or any(v is not None and not isinstance(v, (int, float)) for v in self.exact)
        ):
            raise ConfigError("exact must be a list of numbers or nulls")
        if self.order_mode == "relative" and len(levels) < 2:
            raise ConfigError("relative orders need at least 2 mesh levels (3 for a defined order)")


# ----------------------------------------------------------------------------
# running


@dataclass
class LevelResult:
    index: int
    label: str
    n_boundary_edges: int | None = None
    n_dofs: int | None = None
    spectra: dict = field(default_factory=dict)  # formulation -> EigenResult
    errors: dict = field(default_factory=dict)  # formulation or "mesh" -> message
    seconds: float = 0.0


@dataclass
class ConvergenceTable:
    """Cluster averages and orders; ``values[form][c][l]`` is ``None`` when missing."""

    counts: list
    labels: list
    formulations: list
    cluster_members: list  # list of (first index, size)
    values: dict
    orders: dict
    order_mode: str
    header: list

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_members)

    def cluster_label(self, c: int) -> str:
        start, size = self.cluster_members[c]
        if size == 1:
            return f"j = {start + 1}"
        return f"j = {start + 1}..{start + size}"

    def _cell(self, form, c, lvl) -> str:
        v = self.values[form][c][lvl]
        if v is None:
            return "-"
        s = _fmt_value(v)
        r = self.orders[form][c][lvl]
        return s if r is None else f"{s} ({r:.2f})"

    def rows(self) -> list[list[str]]:
        out = [["", "", "N"] + [str(n) if n is not None else "-" for n in self.counts]]
        for c in range(self.n_clusters):
            for form in self.formulations:
                name = "lambda" if form == "sh" else "lambda+"
                out.append([self.cluster_label(c), name, ""] + [self._cell(form, c, i) for i in range(len(self.counts))])
        return out

    def to_text(self) -> str:
        rows = self.rows()
        widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
        lines = [f"# {h}" for h in self.header]
        for r in rows:
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        rows = self.rows()
        lines = [f"<!-- {h} -->" for h in self.header]
        head = ["cluster", "", "N"] + [str(n) if n is not None else "-" for n in self.counts]
        lines.append("| " + " | ".join(head) + " |")
        lines.append("|" + "---|" * len(head))
        for r in rows[1:]:
            lines.append("| " + " | ".join(r[:2] + [""] + r[3:]) + " |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        for h in self.header:
            buf.write(f"# {h}\n")
        w = csv.writer(buf, lineterminator="\n")
        head = ["cluster", "formulation"]
        for i, n in enumerate(self.counts):
            head += [f"L{i + 1}_N{n}_value", f"L{i + 1}_N{n}_order"]
        w.writerow(head)
        for c in range(self.n_clusters):
            for form in self.formulations:
                row = [self.cluster_label(c), form]
                for i in range(len(self.counts)):
                    v = self.values[form][c][i]
                    r = self.orders[form][c][i]
                    row += ["" if v is None else _fmt_value(v), "" if r is None else f"{r:.2f}"]
                w.writerow(row)
        return buf.getvalue()


def _fmt_value(v: complex) -> str:
    v = complex(v)
    if abs(v.imag) > 1e-4 * max(abs(v), 1e-300):
        return f"{v.real:.4f}{v.imag:+.4f}i"
    return f"{v.real:.4f}"


def _build_level_mesh(cfg: StudyConfig, level) -> Mesh:
    if cfg.kind == "cube":
        return generate_cube_mesh(level)
    if cfg.kind == "lshape":
        return generate_lshape_mesh(level)
    return read_msh(level)


def _level_label(cfg: StudyConfig, level) -> str:
    return f"{cfg.kind} n={level}" if cfg.kind != "msh" else Path(level).name


def run_level(cfg: StudyConfig, index: int, level) -> LevelResult:
    res = LevelResult(index, _level_label(cfg, level))
    t0 = time.perf_counter()
    try:
        mesh = _build_level_mesh(cfg, level)
        dofs = build_dof_map(mesh)
        eps = cfg.material
        A = assemble_A(mesh, cfg.kappa, eps, dofs)
    except Exception as exc:  # noqa: BLE001 - reported per level
        res.errors["mesh"] = f"{type(exc).__name__}: {exc}"
        logger.error("level %d (%s): %s", index + 1, res.label, res.errors["mesh"])
        res.seconds = time.perf_counter() - t0
        return res
    res.n_boundary_edges = dofs.n_boundary
    res.n_dofs = dofs.n_dofs
    req = EigenRequest(nev=cfg.nev, shift=cfg.shift, which=cfg.which, seed=cfg.seed, backend=cfg.backend, tol=cfg.tol)
    for form in cfg.formulations:
        f = Formulation.parse(form).value
        try:
            system = build_system(mesh, cfg.kappa, eps, f, dofs, A)
            res.spectra[f] = shift_invert_solve(system, req)
        except Exception as exc:  # noqa: BLE001 - reported per level
            res.errors[f] = f"{type(exc).__name__}: {exc}"
            logger.error("level %d (%s) %s: %s", index + 1, res.label, f, res.errors[f])
    res.seconds = time.perf_counter() - t0
    return res


def _cluster_sizes(cfg: StudyConfig, levels: list[LevelResult]) -> list[int]:
    if "sizes" in cfg.clusters:
        return list(cfg.clusters["sizes"])
    # group on the finest level that produced a full spectrum
    for lvl in reversed(levels):
        for form in [Formulation.parse(f).value for f in cfg.formulations]:
            r = lvl.spectra.get(form)
            if r is not None and len(r) > 0:
                groups = cluster_eigenvalues(r.eigenvalues, gap=cfg.clusters["gap"])
                return [len(g) for g in groups]
    return []


def _sorted_values(r: EigenResult) -> np.ndarray:
    v = np.asarray(r.eigenvalues, dtype=complex)
    return v[np.argsort(np.abs(v.real), kind="stable")]


def build_table(cfg: StudyConfig, levels: list[LevelResult]) -> ConvergenceTable:
    forms = [Formulation.parse(f).value for f in cfg.formulations]
    sizes = _cluster_sizes(cfg, levels)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int).tolist() if sizes else []
    members = list(zip(starts, sizes))
    counts = [lvl.n_boundary_edges for lvl in levels]
    values, orders = {}, {}
    mode = cfg.order_mode
    for form in forms:
        values[form], orders[form] = [], []
        for c, (s, m) in enumerate(members):
            row = []
            for lvl in levels:
                r = lvl.spectra.get(form)
                v = _sorted_values(r) if r is not None else None
                row.append(cluster_average(v[s:s + m]) if v is not None and len(v) >= s + m else None)
            values[form].append(row)
            ncount = [n if n is not None else 0 for n in counts]
            if mode == "exact" and cfg.exact is not None and c < len(cfg.exact) and cfg.exact[c] is not None:
                orders[form].append(order_exact(row, cfg.exact[c], ncount))
            elif mode == "relative":
                orders[form].append(order_relative(row, ncount))
            else:
                orders[form].append([None] * len(levels))
    header = [
        f"study: {cfg.title or cfg.kind}",
        f"kappa = {cfg.kappa:g}",
        f"eps_r = {cfg.material.describe()}",
        f"formulations = {', '.join(forms)}",
        f"orders = {mode}" + (f", exact = {cfg.exact}" if mode == "exact" else ""),
        f"clusters = {sizes}",
        f"nev = {cfg.nev}, shift = {cfg.shift:g}, selection = {cfg.which}",
    ]
    return ConvergenceTable(counts, [lvl.label for lvl in levels], forms, members, values, orders, mode, header)


@dataclass
class StudyResult:
    table: ConvergenceTable
    levels: list[LevelResult]
    output: Path

    @property
    def all_failed(self) -> bool:
        return not any(lvl.spectra for lvl in self.levels)


def _versions() -> dict:
    from . import __version__

    return {"stekloff": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def run_study(cfg: StudyConfig, write: bool = True) -> StudyResult:
    """Run every level, build the table and (optionally) write all artifacts."""
    t0 = time.perf_counter()
    levels = [run_level(cfg, i, lv) for i, lv in enumerate(cfg.levels)]
    table = build_table(cfg, levels)
    out = Path(cfg.output)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.txt").write_text(table.to_text())
        (out / "table.csv").write_text(table.to_csv())
        (out / "table.md").write_text(table.to_markdown())
        for lvl in levels:
            for form, r in lvl.spectra.items():
                write_spectrum_csv(out / f"spectrum_L{lvl.index + 1}_{form}.csv", r)
        meta = {
            "config": cfg.to_dict(),
            "versions": _versions(),
            "levels": [
                {
                    "level": lvl.index + 1,
                    "label": lvl.label,
                    "n_boundary_edges": lvl.n_boundary_edges,
                    "n_dofs": lvl.n_dofs,
                    "seconds": round(lvl.seconds, 3),
                    "shift": {f: r.shift for f, r in lvl.spectra.items()},
                    "max_residual": {f: float(np.max(r.residuals)) if len(r) else None for f, r in lvl.spectra.items()},
                    "warnings": {f: r.warnings for f, r in lvl.spectra.items() if r.warnings},
                    "errors": lvl.errors,
                }
                for lvl in levels
            ],
            "seconds": round(time.perf_counter() - t0, 3),
        }
        (out / "run.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
    return StudyResult(table, levels, out)
