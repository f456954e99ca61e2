"""Panel files and result emission.

Panel CSV columns: ``person_id,dynasty_id,generation,father_id,mother_id,
spouse_id,y`` plus optional latent columns (``e`` or ``e1,e2``). Missing links
are empty fields. Lines starting with ``#`` are run metadata and are skipped
on load. Floats in panels use shortest round-trip formatting so that a loaded
panel reproduces estimator output exactly.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .models import spec_to_dict
from .pedigree import MISSING, Pedigree, PedigreeError

PANEL_COLUMNS = ["person_id", "dynasty_id", "generation", "father_id", "mother_id", "spouse_id", "y"]
REQUIRED_COLUMNS = {"person_id", "dynasty_id", "generation", "father_id", "y"}


class PanelFormatError(PedigreeError):
    pass


def run_header(seed=None, model=None, topology=None, **extra) -> dict:
    """Metadata block written at the top of every output."""
    head = {"tool": "multigen", "version": __version__, "seed": seed, "model": model,
            "topology": topology}
    head.update(extra)
    return head


def panel_meta(ped: Pedigree) -> dict:
    topo = ped.topology.to_dict() if ped.topology is not None else None
    spec = spec_to_dict(ped.spec) if ped.spec is not None else None
    return run_header(seed=topo["seed"] if topo else None, model=spec, topology=topo)


def _latent_names(ped: Pedigree) -> list[str]:
    if ped.e is None:
        return []
    d = ped.e.shape[1]
    return ["e"] if d == 1 else [f"e{i + 1}" for i in range(d)]


def _link(v) -> str:
    return "" if v == MISSING else str(int(v))


def panel_to_csv(ped: Pedigree, include_latent: bool = False, meta: dict | None = None) -> str:
    buf = io.StringIO()
    meta = panel_meta(ped) if meta is None else meta
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    latent = _latent_names(ped) if include_latent else []
    w.writerow(PANEL_COLUMNS + latent)
    ys = ped.y.tolist()
    es = ped.e.tolist() if latent else None
    for i in range(len(ped)):
        row = [
            str(int(ped.person_id[i])), str(int(ped.dynasty_id[i])), str(int(ped.generation[i])),
            _link(ped.father_id[i]), _link(ped.mother_id[i]), _link(ped.spouse_id[i]), repr(ys[i]),
        ]
        if latent:
            row += [repr(v) for v in es[i]]
        w.writerow(row)
    return buf.getvalue()


def panel_to_json(ped: Pedigree, include_latent: bool = False, meta: dict | None = None) -> str:
    latent = _latent_names(ped) if include_latent else []
    persons = []
    for i in range(len(ped)):
        rec = {
            "person_id": int(ped.person_id[i]),
            "dynasty_id": int(ped.dynasty_id[i]),
            "generation": int(ped.generation[i]),
            "father_id": None if ped.father_id[i] == MISSING else int(ped.father_id[i]),
            "mother_id": None if ped.mother_id[i] == MISSING else int(ped.mother_id[i]),
            "spouse_id": None if ped.spouse_id[i] == MISSING else int(ped.spouse_id[i]),
            "y": float(ped.y[i]),
        }
        for j, name in enumerate(latent):
            rec[name] = float(ped.e[i, j])
        persons.append(rec)
    doc = {"meta": panel_meta(ped) if meta is None else meta,
           "columns": PANEL_COLUMNS + latent, "persons": persons}
    return json.dumps(doc, sort_keys=True)


def export_panel(ped: Pedigree, path, fmt: str | None = None, include_latent: bool = False,
                 meta: dict | None = None) -> None:
    fmt = fmt or _infer_format(path)
    text = (panel_to_csv if fmt == "csv" else panel_to_json)(ped, include_latent, meta)
    _write(path, text)


def _infer_format(path) -> str:
    ext = Path(path).suffix.lower()
    if ext == ".json":
        return "json"
    if ext in (".csv", ".txt", ""):
        return "csv"
    raise PanelFormatError(f"cannot infer format from extension {ext!r}; pass fmt")


def _parse_int(text: str, col: str, where: str, optional: bool) -> int:
    text = text.strip()
    if text == "":
        if optional:
            return MISSING
        raise PanelFormatError(f"{where}: missing value for {col}")
    try:
        return int(text)
    except ValueError:
        raise PanelFormatError(f"{where}: {col}={text!r} is not an integer") from None


def _parse_float(text: str, col: str, where: str) -> float:
    try:
        val = float(text)
    except (TypeError, ValueError):
        raise PanelFormatError(f"{where}: {col}={text!r} is not a number") from None
    if not np.isfinite(val):
        raise PanelFormatError(f"{where}: {col} must be finite")
    return val


def _build(records, columns, labels) -> Pedigree:
    cols = set(columns)
    missing = REQUIRED_COLUMNS - cols
    if missing:
        raise PanelFormatError(f"missing required column(s): {sorted(missing)}")
    unknown = cols - set(PANEL_COLUMNS) - {"e", "e1", "e2"}
    if unknown:
        raise PanelFormatError(f"unknown column(s): {sorted(unknown)}")
    latent = [c for c in ("e", "e1", "e2") if c in cols]
    out = {c: [] for c in PANEL_COLUMNS}
    lat = []
    for rec, where in zip(records, labels):
        out["person_id"].append(_parse_int(rec["person_id"], "person_id", where, False))
        out["dynasty_id"].append(_parse_int(rec["dynasty_id"], "dynasty_id", where, False))
        out["generation"].append(_parse_int(rec["generation"], "generation", where, False))
        for c in ("father_id", "mother_id", "spouse_id"):
            out[c].append(_parse_int(rec.get(c) or "", c, where, True))
        out["y"].append(_parse_float(rec["y"], "y", where))
        if latent:
            lat.append([_parse_float(rec[c], c, where) for c in latent])
    dup = _first_duplicate(out["person_id"])
    if dup is not None:
        raise PanelFormatError(f"{labels[dup]}: duplicate person_id {out['person_id'][dup]}")
    return Pedigree(
        out["person_id"], out["dynasty_id"], out["generation"], out["father_id"],
        out["mother_id"], out["spouse_id"], out["y"], np.array(lat) if latent else None,
        row_labels=labels, columns_present=cols,
    )


def _first_duplicate(ids):
    seen = set()
    for i, v in enumerate(ids):
        if v in seen:
            return i
        seen.add(v)
    return None


def load_panel(path, fmt: str | None = None) -> Pedigree:
    """Read and validate a panel file; errors name the offending line or record."""
    fmt = fmt or _infer_format(path)
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise PanelFormatError(f"{path}: {exc.strerror}") from exc
    if fmt == "csv":
        return _load_csv(text)
    if fmt == "json":
        return _load_json(text)
    raise PanelFormatError(f"unknown panel format {fmt!r}")


def _load_csv(text: str) -> Pedigree:
    lines = text.splitlines()
    body = [(n + 1, ln) for n, ln in enumerate(lines) if ln.strip() and not ln.startswith("#")]
    if not body:
        raise PanelFormatError("empty panel file")
    header_line, header = body[0]
    columns = next(csv.reader([header]))
    columns = [c.strip() for c in columns]
    if len(set(columns)) != len(columns):
        raise PanelFormatError(f"line {header_line}: duplicate column names")
    records, labels = [], []
    for lineno, ln in body[1:]:
        vals = next(csv.reader([ln]))
        if len(vals) != len(columns):
            raise PanelFormatError(
                f"line {lineno}: expected {len(columns)} fields, found {len(vals)}"
            )
        records.append(dict(zip(columns, vals)))
        labels.append(f"line {lineno}")
    return _build(records, columns, labels)


def _load_json(text: str) -> Pedigree:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PanelFormatError(f"invalid JSON: {exc}") from exc
    persons = doc.get("persons") if isinstance(doc, dict) else None
    if not isinstance(persons, list):
        raise PanelFormatError("JSON panel needs a 'persons' list")
    columns = doc.get("columns") or sorted({k for p in persons for k in p})
    records, labels = [], []
    for i, p in enumerate(persons):
        where = f"record {i}"
        if not isinstance(p, dict):
            raise PanelFormatError(f"{where}: not an object")
        extra = set(p) - set(columns)
        if extra:
            raise PanelFormatError(f"{where}: unknown field(s) {sorted(extra)}")
        rec = {}
        for c in columns:
            v = p.get(c)
            rec[c] = "" if v is None else (repr(v) if isinstance(v, float) else str(v))
        records.append(rec)
        labels.append(where)
    return _build(records, columns, labels)


def _write(path, text: str) -> None:
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def _to_plain(obj):
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_to_plain(v) for v in obj.tolist()]
    return obj


def render(obj, fmt: str = "json") -> str:
    """Serialize a result object deterministically (sorted keys, fixed formatting)."""
    if isinstance(obj, Pedigree):
        return panel_to_csv(obj) if fmt == "csv" else panel_to_json(obj)
    if fmt == "json":
        doc = obj.to_dict() if hasattr(obj, "to_dict") else obj
        return json.dumps(_to_plain(doc), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        if not hasattr(obj, "to_csv"):
            raise ValueError(f"{type(obj).__name__} has no CSV form")
        return obj.to_csv()
    if fmt in ("table", "txt", "text"):
        if not hasattr(obj, "to_table"):
            raise ValueError(f"{type(obj).__name__} has no table form")
        return obj.to_table()
    raise ValueError(f"unknown format {fmt!r}")


def emit(obj, path, fmt: str = "json") -> None:
    """Write ``obj`` to ``path``; identical inputs give identical bytes."""
    _write(path, render(obj, fmt))
