"""Line-oriented ``key = value`` files and comma-separated record dumps.

Floats are written with ``repr`` so files round-trip exactly and identical
runs produce byte-identical output.
"""
from __future__ import annotations

from collections.abc import Iterable
from dataclasses import fields
from pathlib import Path

import numpy as np

from .analysis import AnalysisResult
from .errors import FormatError
from .params import ProtocolParams, Tally
from .sync import SyncFrame

TALLY_FORMAT = 1
TALLY_KEYS = ("N0", "Nmu", "Nmup", "C0", "Cmu", "Cmup", "Emu", "Emup",
              "Lp", "Lb", "T", "f", "mu", "mup", "nsigma")
# tally key -> ProtocolParams field
_TALLY_PARAM = {
    "Lp": "test_fraction_phase",
    "Lb": "test_fraction_bit",
    "T": "duration_s",
    "f": "pulse_rate_hz",
    "mu": "mu",
    "mup": "mu_prime",
    "nsigma": "n_sigma",
}


def parse_key_values(lines: Iterable[str], path: str | None = None) -> dict[str, tuple[str, int]]:
    """``{key: (raw value, line number)}``; ``#`` starts a comment."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError("empty key", lineno, path)
        if key in out:
            raise FormatError(f"duplicate key {key!r}", lineno, path)
        out[key] = (value, lineno)
    return out


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(kind: str, raw: str, key: str, lineno: int, path: str | None):
    try:
        if kind == "int":
            as_float = float(raw)
            if not as_float.is_integer():
                raise ValueError
            return int(raw) if raw.lstrip("+-").isdigit() else int(as_float)
        if kind == "float":
            return float(raw)
        return tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise FormatError(f"bad value for {key!r}: {raw!r}", lineno, path) from None


def _param_kind(name: str) -> str:
    if name == "total_pulses":
        return "int"
    if name in ("class_probs", "detector_efficiencies", "dark_rates_hz"):
        return "tuple"
    return "float"


def params_to_text(params: ProtocolParams, header: str | None = None) -> str:
    lines = [f"# {line}" for line in header.splitlines()] if header else []
    for f in fields(params):
        lines.append(f"{f.name} = {_fmt(getattr(params, f.name))}")
    return "\n".join(lines) + "\n"


def params_from_text(text: str, base: ProtocolParams | None = None, path: str | None = None) -> ProtocolParams:
    """Override fields of ``base`` (defaults if None) with those present in ``text``."""
    base = base or ProtocolParams()
    kv = parse_key_values(text.splitlines(), path)
    known = set(ProtocolParams.field_names())
    changes = {}
    for key, (raw, lineno) in kv.items():
        if key not in known:
            raise FormatError(f"unknown parameter {key!r}", lineno, path)
        changes[key] = _convert(_param_kind(key), raw, key, lineno, path)
    return base.replace(**changes)


def load_params(path: str | Path, base: ProtocolParams | None = None) -> ProtocolParams:
    path = Path(path)
    return params_from_text(path.read_text(encoding="utf-8"), base, str(path))


def tally_to_text(tally: Tally, params: ProtocolParams) -> str:
    values = {
        "N0": tally.n_sent[0], "Nmu": tally.n_sent[1], "Nmup": tally.n_sent[2],
        "C0": tally.c_received[0], "Cmu": tally.c_received[1], "Cmup": tally.c_received[2],
        "Emu": tally.E_mu, "Emup": tally.E_mup,
    }
    for key, name in _TALLY_PARAM.items():
        values[key] = float(getattr(params, name))
    lines = [f"format = {TALLY_FORMAT}"]
    lines += [f"{key} = {_fmt(values[key])}" for key in TALLY_KEYS]
    return "\n".join(lines) + "\n"


def tally_from_text(
    text: str, base: ProtocolParams | None = None, path: str | None = None
) -> tuple[Tally, ProtocolParams]:
    """Parse a tally file; returns the tally and ``base`` updated with its parameters."""
    kv = parse_key_values(text.splitlines(), path)
    if "format" not in kv:
        raise FormatError("missing 'format = 1' header", 1, path)
    fmt, lineno = kv.pop("format")
    if fmt != str(TALLY_FORMAT):
        raise FormatError(f"unsupported tally format {fmt!r}", lineno, path)
    for key, (_, lineno) in kv.items():
        if key not in TALLY_KEYS:
            raise FormatError(f"unknown tally key {key!r}", lineno, path)
    missing = [k for k in TALLY_KEYS[:8] if k not in kv]
    if missing:
        raise FormatError(f"missing tally keys: {', '.join(missing)}", None, path)

    def get(key, kind):
        raw, lineno = kv[key]
        return _convert(kind, raw, key, lineno, path)

    tally = Tally(
        n_sent=(get("N0", "int"), get("Nmu", "int"), get("Nmup", "int")),
        c_received=(get("C0", "int"), get("Cmu", "int"), get("Cmup", "int")),
        e_observed=(get("Emu", "float"), get("Emup", "float")),
    )
    base = base or ProtocolParams()
    changes = {name: get(key, "float") for key, name in _TALLY_PARAM.items() if key in kv}
    changes["total_pulses"] = sum(tally.n_sent)
    return tally, base.replace(**changes)


def load_tally(path: str | Path, base: ProtocolParams | None = None) -> tuple[Tally, ProtocolParams]:
    path = Path(path)
    return tally_from_text(path.read_text(encoding="utf-8"), base, str(path))


def report_to_text(result: AnalysisResult) -> str:
    b, r = result.bounds, result.report
    rows = [
        ("r0", b.r0), ("s0_low", b.s0_low), ("s0_high", b.s0_high),
        ("E_u_mup", b.E_u_mup), ("E_u_mu", b.E_u_mu),
        ("s1", b.s1), ("s1_prime", b.s1_prime), ("s_c", b.s_c), ("s_c_signal_branch", b.s_c_prime_branch),
        ("delta1_mup", b.delta1_mup), ("delta1_mu", b.delta1_mu),
        ("e1_mup", b.e1_mup), ("e1_mu", b.e1_mu),
        ("R_mup", r.R_mup), ("R_mu", r.R_mu),
        ("K_mup", r.K_mup), ("K_mu", r.K_mu),
        ("rate_mup_hz", r.rate_mup_hz), ("rate_mu_hz", r.rate_mu_hz), ("rate_total_hz", r.rate_total_hz),
    ]
    lines = [f"{k} = {_fmt(float(v))}" for k, v in rows]
    lines.append(f"flags = {', '.join(r.flags) if r.flags else 'none'}")
    for key in sorted(r.diagnostics):
        value = r.diagnostics[key]
        lines.append(f"diag.{key} = {_fmt(value) if not isinstance(value, str) else value}")
    return "\n".join(lines) + "\n"


def report_from_text(text: str) -> dict[str, float | str]:
    out: dict[str, float | str] = {}
    for key, (raw, _) in parse_key_values(text.splitlines()).items():
        try:
            out[key] = float(raw)
        except ValueError:
            out[key] = raw
    return out


def write_timestamps(timestamps_s, out) -> None:
    for t in np.asarray(timestamps_s, dtype=float):
        out.write(f"{int(round(t * 1e9))}\n")


def read_timestamps(lines: Iterable[str]) -> np.ndarray:
    values = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(int(line) * 1e-9)
        except ValueError:
            raise FormatError(f"bad timestamp {line!r}", lineno) from None
    return np.array(values)


def write_frames(frames: Iterable[SyncFrame], out) -> None:
    for fr in frames:
        out.write(f"{fr.block_index},{int(round(fr.sync_timestamp_s * 1e9))}\n")


def read_frames(lines: Iterable[str], slots_per_block: int) -> list[SyncFrame]:
    frames = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            block, ts = line.split(",")
            frames.append(SyncFrame(int(ts) * 1e-9, int(block), slots_per_block))
        except ValueError:
            raise FormatError(f"bad sync frame {line!r}", lineno) from None
    return frames

