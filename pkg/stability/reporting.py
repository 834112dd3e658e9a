"""
Artifacts of a run (JSON, CSV, SVG) and the comparison of two reports.

Everything written here is deterministic: sorted JSON keys, repr-exact
floats, a fixed SVG hash salt and no date metadata. Wall-clock timings never
reach these files; they live on the RunReport row.
"""
import csv
import hashlib
import json
import logging
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .exceptions import ParameterError, SchemaError  # noqa: E402
from .schema import CSV_COLUMNS, REPORT_FILE, RESULT_KEYS, SCHEMA_VERSION, STAGE_KEYS  # noqa: E402

logger = logging.getLogger(__name__)

SVG_SALT = "prandtl-lab"


def jsonable(value):
    """Plain JSON types for numpy scalars/arrays, complex numbers and tuples."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def dumps(data) -> str:
    return json.dumps(jsonable(data), sort_keys=True, indent=2) + "\n"


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


class ArtifactWriter:
    """
    Writes the files of one run below ``out_dir`` and records each one in
    the manifest (relative path and SHA-256 of the bytes).
    """

    def __init__(self, out_dir, svg=True):
        self.out_dir = Path(out_dir)
        self.svg_enabled = svg
        self.manifest = {}
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def _record(self, path: Path):
        rel = path.relative_to(self.out_dir).as_posix()
        self.manifest[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
        logger.debug("wrote %s", rel)
        return rel

    def write_text(self, name, text):
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return self._record(path)

    def write_json(self, name, data):
        return self.write_text(name, dumps(data))

    def write_csv(self, name, kind, rows):
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = CSV_COLUMNS[kind]
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                if len(row) != len(columns):
                    raise ParameterError(f"{kind} row has {len(row)} cells, schema has {len(columns)}")
                writer.writerow([_cell(v) for v in row])
        return self._record(path)

    def write_svg(self, name, figure):
        if not self.svg_enabled:
            plt.close(figure)
            return None
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
            figure.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(figure)
        return self._record(path)

    def manifest_listing(self):
        return [{"path": p, "sha256": self.manifest[p]} for p in sorted(self.manifest)]


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _figure(title, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def eigen_figure(pair):
    fig, ax = _figure(f"layer profile, tau = {pair.tau_t.real:.4f}{pair.tau_t.imag:+.4f}i", "Z", "W")
    Wt = pair.Wt
    ax.plot(pair.Z, Wt.real, label="Re W")
    ax.plot(pair.Z, Wt.imag, label="Im W")
    ax.legend()
    return fig


def norm_figure(times, norms, title, fitted=None):
    fig, ax = _figure(title, "t", "norm")
    ax.semilogy(times, norms, label="measured")
    if fitted is not None:
        ax.semilogy(times, fitted, "--", label="fit")
        ax.legend()
    return fig


def sweep_figure(report):
    fig, ax = _figure(f"growth rate against k ({report.flag})", "k", "|sigma|")
    ks = [e.k for e in report.entries if e.fitted]
    ax.loglog(ks, [abs(e.sigma) for e in report.entries if e.fitted], "o-", label="measured")
    predicted = [e.predicted for e in report.entries if e.fitted and e.predicted]
    if len(predicted) == len(ks) and ks:
        ax.loglog(ks, predicted, "--", label="predicted")
    ax.legend()
    return fig


def residual_figure(study):
    fig, ax = _figure("normalized residual at t = 0", "eps", "residual")
    totals = [r["normalized"]["total"] for r in study["residual_t0"]]
    ax.loglog(study["eps"], totals, "o-")
    return fig


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def _flatten(data, prefix=""):
    """Numeric leaves of a nested result keyed by dotted paths."""
    out = {}
    if isinstance(data, dict):
        for key in sorted(data):
            out.update(_flatten(data[key], f"{prefix}.{key}" if prefix else str(key)))
    elif isinstance(data, list):
        for i, item in enumerate(data):
            out.update(_flatten(item, f"{prefix}[{i}]"))
    elif isinstance(data, (int, float)) and not isinstance(data, bool):
        out[prefix] = float(data)
    return out


def load_report(path):
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read report {path}: {exc}") from exc


def compare_reports(a: dict, b: dict):
    """
    Rows (key, a, b, abs diff, rel diff) over the numeric results shared by
    two reports. Reports must cover the same stages.
    """
    stages_a, stages_b = set(a.get("stages", {})), set(b.get("stages", {}))
    if stages_a != stages_b:
        raise ParameterError(f"reports cover different stages: {sorted(stages_a)} vs {sorted(stages_b)}")
    if a.get("schema_version") != b.get("schema_version"):
        logger.warning("comparing schema versions %s and %s", a.get("schema_version"), b.get("schema_version"))
    flat_a, flat_b = _flatten(a["stages"]), _flatten(b["stages"])
    rows = []
    for key in sorted(set(flat_a) & set(flat_b)):
        va, vb = flat_a[key], flat_b[key]
        if math.isnan(va) and math.isnan(vb):
            diff, rel = 0.0, 0.0
        else:
            diff = abs(va - vb)
            scale = max(abs(va), abs(vb))
            rel = diff / scale if scale > 0 else 0.0
        rows.append({"key": key, "a": va, "b": vb, "abs": diff, "rel": rel})
    only = sorted(set(flat_a) ^ set(flat_b))
    if only:
        logger.info("%d keys present in only one report", len(only))
    return rows


def validate_stage(name, result):
    """Raise SchemaError when a stage result lacks a frozen key; skipped and failed stages carry only the common keys."""
    required = set(RESULT_KEYS)
    if result.get("status") == "ok":
        required.update(STAGE_KEYS.get(name, ()))
    missing = sorted(required - set(result))
    if missing:
        raise SchemaError(f"stage {name} result is missing {', '.join(missing)}", stage=name, missing=missing)


def report_document(config_hash, stages, manifest, provenance, checks):
    for name, result in stages.items():
        validate_stage(name, result)
    return {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash,
        "stages": stages,
        "manifest": manifest,
        "provenance": provenance,
        "checks": checks,
    }
