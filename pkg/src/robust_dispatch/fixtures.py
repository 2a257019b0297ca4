"""Bundled feeders and forecast series, addressable by short names."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .errors import DataError
from .feeder import FeederModel, TimeSeries, load_feeder, load_series

BUILTIN = {
    "2bus": ("feeder_2bus.json", "series_2bus.csv"),
    "13bus": ("feeder_13bus.json", "series_13bus.csv"),
    "13bus-stressed": ("feeder_13bus_stressed.json", "series_13bus_stressed.csv"),
}


def data_path(name: str) -> Path:
    return Path(str(resources.files("robust_dispatch") / "data" / name))


def feeder_path(name_or_path: str) -> Path:
    if name_or_path in BUILTIN:
        return data_path(BUILTIN[name_or_path][0])
    p = Path(name_or_path)
    if not p.exists():
        raise DataError(f"feeder {name_or_path!r} is neither a file nor one of {sorted(BUILTIN)}")
    return p


def series_path(feeder: str, series: str | None) -> Path:
    if series is not None:
        p = Path(series)
        if not p.exists():
            raise DataError(f"series file {series!r} not found")
        return p
    if feeder in BUILTIN:
        return data_path(BUILTIN[feeder][1])
    raise DataError("a --series file is required for a feeder given by path")


def builtin(name: str) -> tuple[FeederModel, TimeSeries]:
    """Feeder and forecast series for a bundled fixture."""
    if name not in BUILTIN:
        raise DataError(f"unknown builtin fixture {name!r}; expected one of {sorted(BUILTIN)}")
    f, s = BUILTIN[name]
    return load_feeder(data_path(f)), load_series(data_path(s))


def default_uncertainty_path() -> Path:
    return data_path("uncertainty_default.json")
