"""CSV and config-file handling for the command line."""

import configparser
import csv
import hashlib
import json
import math
import re

import numpy as np

from .sda import RAW, SCALED, SDAOptions
from .simulation import LAWS, PRECISIONS, PROCEDURES, STRUCTURES, Cell, SimulationConfig


class UsageError(Exception):
    """Bad input files or configuration; maps to exit code 2."""


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_matrix(path):
    """Numeric CSV to a 2-D array; a non-numeric first line is taken as a header."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from exc
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise UsageError(f"{path}: no data rows")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise UsageError(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise UsageError(f"{path}: row {i + 1}, column {j + 1}: not a number: {cell!r}") from None
    if not np.all(np.isfinite(out)):
        raise UsageError(f"{path}: contains non-finite values")
    return out


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        if math.isnan(value):
            return "NA"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.10g}"
    return str(value)


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(row[k]) for k in header])


def write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(payload):
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---- simulation config -------------------------------------------------------

_RUN_KEYS = {"seed": int, "reps": int, "procedures": str, "rsda_b": int, "workers": int}
_GRID_KEYS = {
    "structure": str, "rho": float, "dist": str, "n": int, "p": int,
    "pi1": float, "mu0": float, "alpha": float, "precision": str,
}
_OPTION_KEYS = {"t1": str, "n_lambda": int, "lambda_min_ratio": float, "cap": int, "n1_frac": float}
_SECTIONS = {"run": _RUN_KEYS, "grid": _GRID_KEYS, "options": _OPTION_KEYS}
_CHOICES = {"structure": STRUCTURES, "dist": LAWS, "precision": PRECISIONS, "t1": (SCALED, RAW)}


def _line_of(text, section, key):
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"\[(.+)\]$", stripped)
        if m:
            current = m.group(1).strip().lower()
            if current == section and not key:
                return lineno
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped, re.I):
            return lineno
    return "?"


def _convert(text, path, section, key, raw, typ):
    try:
        value = typ(raw.strip())
    except ValueError:
        raise UsageError(
            f"{path}:{_line_of(text, section, key)}: [{section}] {key}: expected {typ.__name__}, got {raw!r}"
        ) from None
    choices = _CHOICES.get(key)
    if choices and value not in choices:
        raise UsageError(f"{path}:{_line_of(text, section, key)}: [{section}] {key}: must be one of {list(choices)}")
    return value


def load_sim_config(path):
    """Parse an INI simulation config.

    ``[grid]`` values may be comma-separated lists; the grid is their
    Cartesian product in file order.  Returns ``(SimulationConfig, workers, canonical dict)``.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from exc
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None

    for section in parser.sections():
        if section not in _SECTIONS:
            raise UsageError(f"{path}:{_line_of(text, section.lower(), '')}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise UsageError(f"{path}:{_line_of(text, section, key)}: [{section}] unknown key {key!r}")
    if "grid" not in parser:
        raise UsageError(f"{path}: missing [grid] section")

    def get(section, key, default):
        if section in parser and key in parser[section]:
            return _convert(text, path, section, key, parser[section][key], _SECTIONS[section][key])
        return default

    axes = {}
    for key, typ in _GRID_KEYS.items():
        if key in parser["grid"]:
            parts = [s for s in parser["grid"][key].split(",") if s.strip()]
            if not parts:
                raise UsageError(f"{path}:{_line_of(text, 'grid', key)}: [grid] {key}: empty value")
            axes[key] = [_convert(text, path, "grid", key, s, typ) for s in parts]
    cells = [{}]
    for key, values in axes.items():
        cells = [dict(c, **{key: v}) for c in cells for v in values]
    try:
        cell_objs = tuple(Cell(**c) for c in cells)
    except Exception as exc:  # Cell validation messages are the diagnostics
        raise UsageError(f"{path}: invalid grid cell: {exc}") from None

    procedures = get("run", "procedures", ",".join(PROCEDURES))
    procedures = tuple(s.strip() for s in procedures.split(",") if s.strip())
    bad = [s for s in procedures if s not in PROCEDURES]
    if bad:
        raise UsageError(f"{path}:{_line_of(text, 'run', 'procedures')}: [run] procedures: unknown {bad}")

    options = dict(
        t1_mode=get("options", "t1", SCALED),
        n_lambda=get("options", "n_lambda", 50),
        lambda_min_ratio=get("options", "lambda_min_ratio", 1e-3),
        cap=get("options", "cap", None),
        n1_frac=get("options", "n1_frac", None),
    )
    try:
        config = SimulationConfig(
            cells=cell_objs,
            reps=get("run", "reps", 200),
            procedures=procedures,
            seed=get("run", "seed", 0),
            rsda_b=get("run", "rsda_b", 11),
            options=SDAOptions(**options),
        )
    except Exception as exc:
        raise UsageError(f"{path}: {exc}") from None
    workers = get("run", "workers", 1)
    canonical = {
        "cells": [c for c in cells],
        "reps": config.reps,
        "procedures": list(procedures),
        "rsda_b": config.rsda_b,
        "options": options,
    }
    return config, workers, canonical
