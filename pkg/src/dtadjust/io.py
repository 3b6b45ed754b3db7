"""CSV ingestion, JSON analysis configs, and CSV/JSON/SVG outputs."""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .bootstrap import BootstrapConfig, EffectRequest, InferenceResult, infer_effects
from .core import (
    Dataset,
    GridSpec,
    ThresholdGrid,
    TransformSpec,
    build_design_matrix,
    make_threshold_grid,
    validate_dataset,
)
from .drfit import DrFit, LinkSpec, balance_residual, fit_all
from .errors import ConfigError, DTAError, EmptyFile, MissingColumn, NonpositiveH, ParseError
from .estimators import adjusted_cdf, dte, rearrange, simple_cdf

OUTPUT_COLUMNS = ("y", "estimate", "se", "ci_lo", "ci_hi", "estimator", "kind", "h")


def _sorted_labels(values: Sequence[str]) -> list[str]:
    distinct = set(values)
    try:
        return sorted(distinct, key=float)
    except ValueError:
        return sorted(distinct)


def load_csv(path, outcome: str, treatment: str, covariates: Sequence[str] = ()) -> Dataset:
    """Read a comma-delimited UTF-8 file with a header row.

    Treatment values are mapped to ``0..K-1`` in sorted order (numeric order
    when every label parses as a number); the original labels are kept in
    ``Dataset.arm_labels``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path} is empty")
        header = [h.strip() for h in header]
        cols = [outcome, treatment, *covariates]
        for c in cols:
            if c not in header:
                raise MissingColumn(f"column {c!r} not found in {path}; header is {header}")
        pos = {c: header.index(c) for c in cols}
        ys, ws, xs = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(row_no, header[len(row)], "")
            ys.append(_parse(row[pos[outcome]], row_no, outcome))
            ws.append(row[pos[treatment]].strip())
            xs.append([_parse(row[pos[c]], row_no, c) for c in covariates])
    if not ys:
        raise EmptyFile(f"{path} has a header but no data rows")
    labels = _sorted_labels(ws)
    code = {lab: k for k, lab in enumerate(labels)}
    w = np.array([code[v] for v in ws], dtype=np.int64)
    x = np.array(xs, dtype=np.float64).reshape(len(ys), len(covariates))
    return validate_dataset(ys, w, x, n_arms=len(labels), covariate_names=tuple(covariates),
                            arm_labels=labels)


def _parse(cell: str, row: int, col: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(row, col, cell) from None


@dataclass(frozen=True)
class AnalysisConfig:
    data: str
    outcome: str
    treatment: str
    covariates: tuple[str, ...] = ()
    transform: TransformSpec = field(default_factory=TransformSpec)
    link: str = "logit"
    grid: GridSpec = field(default_factory=GridSpec)
    pairs: tuple[tuple[str, str], ...] = ()
    pte_h: tuple[float, ...] = ()
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    output_dir: str = "dte_output"
    monotonize: bool = True

    def __post_init__(self):
        LinkSpec(self.link)
        for h in self.pte_h:
            if not h > 0:
                raise NonpositiveH(f"pte width h must be positive, got {h}")

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir: str | os.PathLike | None = None,
                  seed: int | None = None) -> "AnalysisConfig":
        for key in ("data", "outcome", "treatment"):
            if key not in raw:
                raise ConfigError(f"config is missing required key {key!r}")
        boot = dict(raw.get("bootstrap", {}))
        if seed is not None:
            boot["seed"] = seed
        if "seed" not in boot:
            raise ConfigError("a bootstrap seed is required: set bootstrap.seed in the "
                              "config or pass --seed")
        data = str(raw["data"])
        if base_dir is not None and not os.path.isabs(data):
            data = os.path.join(base_dir, data)
        pairs = tuple((str(a), str(b)) for a, b in raw.get("pairs", ()))
        try:
            bootstrap = BootstrapConfig(
                scheme=boot.get("scheme", "multinomial"),
                replicates=int(boot.get("replicates", 1000)),
                seed=int(boot["seed"]),
                ci_level=float(boot.get("ci_level", 0.95)),
                ci_kind=boot.get("ci_kind", "normal-se"),
                replicate_formula=boot.get("replicate_formula", "augmented"),
                normalized=bool(boot.get("normalized", False)),
                keep_replicates=False,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid bootstrap settings: {exc}") from None
        return cls(
            data=data,
            outcome=str(raw["outcome"]),
            treatment=str(raw["treatment"]),
            covariates=tuple(raw.get("covariates", ())),
            transform=TransformSpec.from_dict(raw.get("transform", {})),
            link=raw.get("link", "logit"),
            grid=GridSpec.from_dict(raw.get("grid", {})),
            pairs=pairs,
            pte_h=tuple(float(h) for h in raw.get("pte_h", ())),
            bootstrap=bootstrap,
            output_dir=str(raw.get("output_dir", "dte_output")),
            monotonize=bool(raw.get("monotonize", True)),
        )

    @classmethod
    def load(cls, path, seed: int | None = None) -> "AnalysisConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw, base_dir=path.parent, seed=seed)

    def to_dict(self) -> dict:
        return {
            "data": self.data, "outcome": self.outcome, "treatment": self.treatment,
            "covariates": list(self.covariates), "transform": self.transform.to_dict(),
            "link": self.link, "grid": self.grid.to_dict(),
            "pairs": [list(p) for p in self.pairs], "pte_h": list(self.pte_h),
            "bootstrap": self.bootstrap.to_dict(), "output_dir": self.output_dir,
            "monotonize": self.monotonize,
        }


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    config: AnalysisConfig
    data: Dataset
    grid: ThresholdGrid
    fit: DrFit
    # {(estimator, effect name): InferenceResult}, estimator in {"simple", "adjusted"}
    results: dict
    monotone: dict
    diagnostics: dict

    def names(self) -> list[str]:
        seen: list[str] = []
        for _, name in self.results:
            if name not in seen:
                seen.append(name)
        return seen


def _arm_index(data: Dataset, label: str) -> int:
    if label in data.arm_labels:
        return data.arm_labels.index(label)
    try:
        target = float(label)
    except ValueError:
        target = None
    if target is not None:
        for k, lab in enumerate(data.arm_labels):
            try:
                if float(lab) == target:
                    return k
            except ValueError:
                continue
    raise ConfigError(f"treatment label {label!r} not in data; labels are {list(data.arm_labels)}")


def run_analysis(config: AnalysisConfig, threads: int | None = None) -> AnalysisResult:
    """Load, fit, estimate and bootstrap every requested DTE and PTE curve."""
    data = load_csv(config.data, config.outcome, config.treatment, config.covariates)
    design = build_design_matrix(data, config.transform)
    grid = make_threshold_grid(data, config.grid)
    fit = fit_all(data, design, grid, config.link, threads=threads)
    pairs = config.pairs or ((data.arm_labels[-1], data.arm_labels[0]),)
    requests = []
    for a, b in pairs:
        arms = (_arm_index(data, a), _arm_index(data, b))
        requests.append(EffectRequest(arms))
        requests.extend(EffectRequest(arms, "pte", h) for h in config.pte_h)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = infer_effects(data, grid, requests, config.bootstrap,
                                {"simple": None, "adjusted": (fit, design)}, threads)

    monotone = {}
    if config.monotonize:
        for name, make in (("simple", lambda k: simple_cdf(data, grid, k)),
                           ("adjusted", lambda k: _quiet_adjusted(fit, data, design, k))):
            for req in requests:
                if req.effect == "dte":
                    k, kp = req.arms
                    monotone[name, req.name] = dte(rearrange(make(k)), rearrange(make(kp))).values
    resid = balance_residual(fit, data, design)
    diagnostics = {
        "fit": fit.diagnostics.summary(),
        "max_abs_balance_residual": float(np.max(np.abs(resid))),
        "arm_labels": {lab: k for k, lab in enumerate(data.arm_labels)},
        "arm_counts": [int(c) for c in data.arm_counts],
        "n": data.n,
        "grid_kind": grid.kind,
        "grid_size": len(grid),
        "design_columns": list(design.column_names),
    }
    return AnalysisResult(config, data, grid, fit, results, monotone, diagnostics)


def _quiet_adjusted(fit, data, design, k):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return adjusted_cdf(fit, data, design, k)


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def _num(v: float) -> str:
    return repr(float(v))


def _rows(estimator: str, res: InferenceResult) -> list[list[str]]:
    kind = "pte" if res.point.h is not None else "dte"
    h = "" if res.point.h is None else _num(res.point.h)
    return [[_num(y), _num(e), _num(s), _num(lo), _num(hi), estimator, kind, h]
            for y, e, s, lo, hi in zip(res.point.grid.values, res.point.values, res.se,
                                       res.ci_lo, res.ci_hi)]


def write_result_csv(path, results: Mapping[str, InferenceResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OUTPUT_COLUMNS)
        for estimator, res in results.items():
            writer.writerows(_rows(estimator, res))


def read_result_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def emit_outputs(analysis: AnalysisResult, output_dir=None) -> list[Path]:
    """Write ``<name>.csv``, ``<name>.json`` and ``<name>.svg`` per effect curve."""
    out = Path(output_dir or analysis.config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DTAError(f"cannot create output directory {out}: {exc}") from None
    written = []
    for name in analysis.names():
        per_est = {est: res for (est, nm), res in analysis.results.items() if nm == name}
        csv_path = out / f"{name}.csv"
        write_result_csv(csv_path, per_est)
        doc = {
            "name": name,
            "columns": list(OUTPUT_COLUMNS),
            "estimators": {},
            "config": analysis.config.to_dict(),
            "diagnostics": analysis.diagnostics,
        }
        simple = per_est.get("simple")
        for est, res in per_est.items():
            entry = {
                "y": res.point.grid.values.tolist(),
                "estimate": res.point.values.tolist(),
                "se": res.se.tolist(),
                "ci_lo": res.ci_lo.tolist(),
                "ci_hi": res.ci_hi.tolist(),
                "kind": "pte" if res.point.h is not None else "dte",
                "h": res.point.h,
                "replicate_formula": res.diagnostics.get("replicate_formula"),
            }
            if (est, name) in analysis.monotone:
                entry["estimate_monotonized"] = analysis.monotone[est, name].tolist()
            if simple is not None and est != "simple":
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(simple.se > 0, res.se / simple.se, np.nan)
                entry["se_ratio_vs_simple"] = [None if not math.isfinite(r) else float(r)
                                               for r in ratio]
            doc["estimators"][est] = entry
        json_path = out / f"{name}.json"
        json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        svg_path = out / f"{name}.svg"
        svg_path.write_text(render_svg(name, per_est), encoding="utf-8")
        written += [csv_path, json_path, svg_path]
    return written


def render_svg(title: str, results: Mapping[str, InferenceResult],
               panel_w: int = 420, panel_h: int = 300) -> str:
    """Side-by-side panels, one per estimator: estimate plus a shaded pointwise band."""
    pad = 40
    items = list(results.items())
    all_y = np.concatenate([r.point.grid.values for _, r in items])
    all_v = np.concatenate([np.r_[r.ci_lo, r.ci_hi, r.point.values] for _, r in items])
    x0, x1 = float(all_y.min()), float(all_y.max())
    v0, v1 = float(np.nanmin(all_v)), float(np.nanmax(all_v))
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    if v1 == v0:
        v0, v1 = v0 - 0.01, v1 + 0.01

    width = panel_w * len(items)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{panel_h}" '
             f'viewBox="0 0 {width} {panel_h}">',
             f"<title>{escape(title)}</title>"]
    for p, (est, res) in enumerate(items):
        ox = p * panel_w

        def sx(x):
            return ox + pad + (x - x0) / (x1 - x0) * (panel_w - 2 * pad)

        def sy(v):
            return panel_h - pad - (v - v0) / (v1 - v0) * (panel_h - 2 * pad)

        ys = res.point.grid.values
        step = res.point.h is None

        def line(values):
            pts = []
            for j, (x, v) in enumerate(zip(ys, values)):
                if step and j > 0:
                    pts.append(f"{sx(x):.2f},{sy(values[j - 1]):.2f}")
                pts.append(f"{sx(x):.2f},{sy(v):.2f}")
            return "M" + " L".join(pts)

        band = [f"{sx(x):.2f},{sy(v):.2f}" for x, v in zip(ys, res.ci_hi)]
        band += [f"{sx(x):.2f},{sy(v):.2f}" for x, v in zip(ys[::-1], res.ci_lo[::-1])]
        parts.append(f'<g class="panel" data-estimator="{escape(est)}">')
        parts.append(f'<text x="{ox + pad}" y="{pad - 12}" font-size="13">'
                     f'{escape(title)} ({escape(est)})</text>')
        if v0 < 0.0 < v1:
            parts.append(f'<line x1="{sx(x0):.2f}" y1="{sy(0):.2f}" x2="{sx(x1):.2f}" '
                         f'y2="{sy(0):.2f}" stroke="#999" stroke-dasharray="4 3"/>')
        parts.append(f'<polygon class="band" points="{" ".join(band)}" '
                     f'fill="#4477aa" fill-opacity="0.25" stroke="none"/>')
        parts.append(f'<path class="ci-lo" d="{line(res.ci_lo)}" fill="none" '
                     f'stroke="#4477aa" stroke-width="0.8"/>')
        parts.append(f'<path class="ci-hi" d="{line(res.ci_hi)}" fill="none" '
                     f'stroke="#4477aa" stroke-width="0.8"/>')
        parts.append(f'<path class="estimate" d="{line(res.point.values)}" fill="none" '
                     f'stroke="#222" stroke-width="1.5"/>')
        if not step:
            for x, v in zip(ys, res.point.values):
                parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(v):.2f}" r="2.5" fill="#222"/>')
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
