"""File ingestion and result serialization.

Every emitted artifact gets a manifest sidecar (<path>.manifest.json) that
records the command, the fully resolved configuration, content digests of
all inputs, and any seeds, so a result file can always be regenerated.
Result files themselves are deterministic: fixed field order, floats
printed with 9 significant digits, '.' decimal separator, LF line endings.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ValidationError
from .sensitivity import IntensityRow, IntensityTable
from .strainmap import ORIENTATIONS, StrainMap
from .charge import Spectrum

FLOAT_FORMAT = "%.9g"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: list
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)  # label -> {path, sha256}
    seed: Optional[int] = None
    version: str = __version__
    created_utc: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )

    def add_input(self, label: str, path) -> None:
        self.inputs[label] = {"path": str(path), "sha256": sha256_file(path)}

    def as_dict(self) -> dict:
        return {
            "tool": "nvsk",
            "version": self.version,
            "command": list(self.command),
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "created_utc": self.created_utc,
        }


def _round_floats(obj):
    if isinstance(obj, float):
        if math.isfinite(obj):
            return float(FLOAT_FORMAT % obj)
        return None  # nan/inf have no strict-JSON encoding; emit null
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return _round_floats(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _write_bytes(path, text: str) -> None:
    Path(path).write_bytes(text.encode("utf-8"))


def write_manifest(out_path, manifest: RunManifest) -> Path:
    sidecar = Path(str(out_path) + ".manifest.json")
    payload = json.dumps(_round_floats(manifest.as_dict()), indent=2) + "\n"
    _write_bytes(sidecar, payload)
    return sidecar


def emit_json(result: dict, path, manifest: Optional[RunManifest] = None) -> None:
    """Write a result dict as JSON with the standard float formatting."""
    payload = json.dumps(_round_floats(result), indent=2) + "\n"
    _write_bytes(path, payload)
    if manifest is not None:
        write_manifest(path, manifest)


def format_json(result: dict) -> str:
    return json.dumps(_round_floats(result), indent=2)


def emit_csv(columns, path, manifest: Optional[RunManifest] = None) -> None:
    """Write named columns as CSV; headers carry the unit suffixes.

    columns is a sequence of (header, values) pairs of equal length.
    """
    headers = [h for h, _ in columns]
    arrays = [np.asarray(v) for _, v in columns]
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise ValidationError(f"column lengths differ: {sorted(lengths)}")
    buf = io.StringIO()
    buf.write(",".join(headers) + "\n")
    for row in zip(*arrays):
        cells = []
        for value in row:
            if isinstance(value, (float, np.floating)):
                cells.append(FLOAT_FORMAT % float(value))
            else:
                cells.append(str(value))
        buf.write(",".join(cells) + "\n")
    _write_bytes(path, buf.getvalue())
    if manifest is not None:
        write_manifest(path, manifest)


def emit_results(result, fmt: str, path, manifest: Optional[RunManifest] = None) -> None:
    """Write a result artifact in the requested format plus its manifest.

    fmt "json" takes a dict; fmt "csv" takes (header, values) column pairs.
    """
    if fmt == "json":
        emit_json(result, path, manifest)
    elif fmt == "csv":
        emit_csv(result, path, manifest)
    else:
        raise ValidationError(f"format must be 'json' or 'csv', got {fmt!r}")


# --- intensity tables ---

_TABLE_REQUIRED = ("intensity_mw_um2", "contrast", "psi", "overhead_us")
_TABLE_RATE_COLUMN = "photon_rate_per_nv_kcps"


def ingest_intensity_table(path) -> IntensityTable:
    """Load and validate a measured intensity table.

    Required columns: intensity_mw_um2, contrast, psi, overhead_us; optional
    photon_rate_per_nv_kcps. Rows are sorted by intensity; duplicate
    intensities and non-finite cells are rejected with the row number.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"table file not found: {path}")
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty table")
        missing = [c for c in _TABLE_REQUIRED if c not in reader.fieldnames]
        if missing:
            raise ValidationError(f"{path}: missing columns: {', '.join(missing)}")
        has_rate = _TABLE_RATE_COLUMN in reader.fieldnames
        rows = []
        for lineno, record in enumerate(reader, start=2):
            def cell(column):
                raw = (record.get(column) or "").strip()
                try:
                    value = float(raw)
                except ValueError:
                    raise ValidationError(
                        f"{path}:{lineno}: bad {column} value {raw!r}"
                    ) from None
                if not math.isfinite(value):
                    raise ValidationError(
                        f"{path}:{lineno}: {column} must be finite, got {raw}"
                    )
                return value

            try:
                rows.append(
                    IntensityRow(
                        intensity=cell("intensity_mw_um2"),
                        contrast_c=cell("contrast"),
                        psi=cell("psi"),
                        t_overhead=cell("overhead_us"),
                        photon_rate_kcps=cell(_TABLE_RATE_COLUMN) if has_rate else None,
                    )
                )
            except ValidationError as exc:
                if str(exc).startswith(str(path)):
                    raise
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValidationError(f"{path}: table has no data rows")
    rows.sort(key=lambda r: r.intensity)
    for i, (a, b) in enumerate(zip(rows, rows[1:])):
        if b.intensity == a.intensity:
            raise ValidationError(
                f"{path}: duplicate intensity {a.intensity:g} mW/um^2 "
                f"(sorted rows {i + 1} and {i + 2})"
            )
    return IntensityTable(rows)


def write_intensity_table(table: IntensityTable, path) -> None:
    columns = [
        ("intensity_mw_um2", [r.intensity for r in table.rows]),
        ("contrast", [r.contrast_c for r in table.rows]),
        ("psi", [r.psi for r in table.rows]),
        ("overhead_us", [r.t_overhead for r in table.rows]),
    ]
    if table.rows[0].photon_rate_kcps is not None:
        columns.append(
            (_TABLE_RATE_COLUMN, [r.photon_rate_kcps for r in table.rows])
        )
    emit_csv(columns, path)


# --- strain maps ---


def _sidecar_path(map_path) -> Path:
    return Path(map_path).with_suffix(".json")


def save_strain_map(strain_map: StrainMap, path) -> None:
    """Numeric CSV grid (kHz) plus a JSON sidecar with units and pitch.

    Masked pixels are stored as nan.
    """
    path = Path(path)
    values = np.where(strain_map.mask, strain_map.values, np.nan)
    np.savetxt(path, values, delimiter=",", fmt=FLOAT_FORMAT, newline="\n")
    sidecar = {
        "pixel_pitch_um": strain_map.pixel_pitch_um,
        "orientation": strain_map.orientation,
        "units": "kHz",
    }
    _write_bytes(_sidecar_path(path), json.dumps(_round_floats(sidecar), indent=2) + "\n")


def load_strain_map(path) -> StrainMap:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"strain map not found: {path}")
    sidecar_path = _sidecar_path(path)
    if not sidecar_path.is_file():
        raise ValidationError(f"strain map sidecar not found: {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    units = sidecar.get("units")
    if units != "kHz":
        raise ValidationError(f"{sidecar_path}: expected units 'kHz', got {units!r}")
    pitch = sidecar.get("pixel_pitch_um")
    orientation = sidecar.get("orientation", "nv1")
    if orientation not in ORIENTATIONS:
        raise ValidationError(f"{sidecar_path}: unknown orientation {orientation!r}")
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: cannot parse numeric grid: {exc}") from None
    return StrainMap(values=values, pixel_pitch_um=float(pitch), orientation=orientation)


# --- spectra ---


def load_spectrum(path, longpass_nm: float = 550.0) -> Spectrum:
    """CSV with columns wavelength_nm, counts."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"spectrum file not found: {path}")
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or not {"wavelength_nm", "counts"} <= set(
            reader.fieldnames
        ):
            raise ValidationError(
                f"{path}: expected columns wavelength_nm, counts"
            )
        wl, counts = [], []
        for lineno, record in enumerate(reader, start=2):
            try:
                wl.append(float(record["wavelength_nm"]))
                counts.append(float(record["counts"]))
            except (TypeError, ValueError):
                raise ValidationError(f"{path}:{lineno}: bad numeric value") from None
    return Spectrum(
        wavelength_nm=np.array(wl), counts=np.array(counts), longpass_nm=longpass_nm
    )


def write_spectrum(spectrum: Spectrum, path) -> None:
    emit_csv(
        [
            ("wavelength_nm", spectrum.wavelength_nm),
            ("counts", spectrum.counts),
        ],
        path,
    )
