from __future__ import annotations

import io
import json
import math

import numpy as np
import pandas as pd

from povtrap.capital_model import TableLoss
from povtrap.constants import NA_MARK, SIG_DIGITS, log
from povtrap.exceptions import ValidationError

FLOAT_FORMAT = f"%.{SIG_DIGITS}g"


def parse_grid(text: str, key: str = "x_grid") -> list[float]:
    """Parse a grid given as ``start:stop:step`` (stop included) or as a comma
    separated list of values

    Parameters
    ----------
    text : str
        Grid specification
    key : str, optional
        Option name used in error messages, by default "x_grid"

    Returns
    -------
    list[float]
        Grid values in the order given
    """
    text = str(text).strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if not step > 0.0 or stop < start:
                raise ValidationError(
                    f"'{key}' needs start <= stop and a positive step, got {text}",
                    key,
                )
            count = int(math.floor((stop - start) / step + 1e-9))
            values = start + step * np.arange(count + 1)
            # Snap the accumulated grid onto the decimal values it stands for
            return [float(f"{v:.{SIG_DIGITS}g}") for v in values]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse '{key}' grid {text!r}", key)


def parse_pair(text: str, key: str) -> tuple[float, float]:
    """``lo:hi`` or ``lo,hi``"""
    parts = str(text).replace(":", ",").split(",")
    try:
        lo, hi = (float(v) for v in parts)
    except ValueError:
        raise ValidationError(f"'{key}' must be two numbers lo,hi, got {text!r}", key)
    return lo, hi


def parse_vary(text: str, names) -> tuple[str, list[float]]:
    """``NAME=GRID`` sweep specification"""
    name, sep, grid = str(text).partition("=")
    name = name.strip()
    if not sep or name not in names:
        raise ValidationError(
            f"'vary' must be NAME=GRID with NAME one of {', '.join(names)}, got"
            f" {text!r}",
            "vary",
        )
    return name, parse_grid(grid, "vary")


def round_sig(value):
    """Round floats to the output precision, unwrap numpy scalars"""
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return float(f"{value:.{SIG_DIGITS}g}")
    return value


def records_to_csv(records: list[dict]) -> str:
    frame = pd.DataFrame.from_records(
        [{k: round_sig(v) for k, v in record.items()} for record in records]
    )
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, na_rep=NA_MARK)


def records_to_json(records: list[dict]) -> str:
    buf = io.StringIO()
    for record in records:
        buf.write(json.dumps({k: round_sig(v) for k, v in record.items()}))
        buf.write("\n")
    return buf.getvalue()


def format_records(records: list[dict], fmt: str) -> str:
    if fmt == "csv":
        return records_to_csv(records)
    if fmt == "json":
        return records_to_json(records)
    raise ValidationError(f"unknown output format {fmt!r}", "format")


def load_loss_table(path: str) -> TableLoss:
    """Read an inverse-CDF table with columns ``u`` and ``z``"""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise ValidationError(f"loss table '{path}' not found", "loss_table")
    except (ValueError, pd.errors.ParserError):
        raise ValidationError(f"error while parsing loss table '{path}'", "loss_table")
    for column in ("u", "z"):
        if column not in frame.columns:
            raise ValidationError(
                f"loss table '{path}' has no column '{column}'", "loss_table"
            )
    log.debug("Loaded %d loss table rows from %s", len(frame), path)
    return TableLoss(
        tuple(frame["u"].astype(float)), tuple(frame["z"].astype(float))
    )


def trace_records(paths) -> list[dict]:
    """Flatten path records into ``path, time, capital, event`` rows"""
    rows = []
    for index, path in enumerate(paths):
        rows.append(
            {
                "path": index,
                "time": 0.0,
                "capital": path.initial_capital,
                "event": "start",
            }
        )
        for time, capital, z in path.events:
            rows.append(
                {"path": index, "time": time, "capital": capital, "event": "flow"}
            )
            rows.append(
                {"path": index, "time": time, "capital": capital * z, "event": "loss"}
            )
            if path.trapped_at == time:
                rows.append(
                    {
                        "path": index,
                        "time": time,
                        "capital": capital * z,
                        "event": "trapped",
                    }
                )
        rows.append(
            {
                "path": index,
                "time": path.final_time,
                "capital": path.final_capital,
                "event": "end",
            }
        )
    return rows
