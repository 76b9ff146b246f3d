"""INI configuration for the experiment matrix.

Example::

    [market]
    # synthetic generator parameters, or file paths (ticks, dex, noise, calibration)
    p0 = 3000
    sigma = 1e-4

    [agent]
    alpha = 0.35
    lam = 0.01

    [matrix]
    seeds = 2
    n_slots = 500
    workers = 1

    [weights]
    txn = 0.037, 0.331, 0.632
    volume = 0.286, 0.503, 0.211

    [output]
    dir = out
    event_logs = false

Relative file paths resolve against the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path

from .agents import AgentParams
from .amm import FEE_TIERS
from .report import DEFAULT_WEIGHTS, MatrixConfig, WeightVector
from .sim import AGENT_MODELS, MarketSpec

_PATH_KEYS = {"ticks": "ticks_path", "dex": "dex_path", "noise": "noise_path", "calibration": "calibration_path"}


class ConfigError(ValueError):
    pass


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.replace(",", " ").split())


def _typed(cls, section: configparser.SectionProxy, renames: dict[str, str] | None = None, base: Path | None = None):
    renames = renames or {}
    types = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, raw in section.items():
        name = renames.get(key, key)
        if name not in types:
            raise ConfigError(f"[{section.name}] unknown key '{key}'")
        t = str(types[name])
        try:
            if name.endswith("_path"):
                p = Path(raw)
                kwargs[name] = str(p if p.is_absolute() or base is None else base / p)
            elif t.startswith("int"):
                kwargs[name] = int(raw)
            else:
                kwargs[name] = float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section.name}] bad value for '{key}': {raw!r}") from exc
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {exc}") from exc


def parse_config(text: str, base_dir: str | Path | None = None) -> MatrixConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    base = Path(base_dir) if base_dir is not None else None
    known = {"market", "agent", "matrix", "weights", "output"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")

    market = _typed(MarketSpec, cp["market"], _PATH_KEYS, base) if cp.has_section("market") else MarketSpec()
    params = _typed(AgentParams, cp["agent"]) if cp.has_section("agent") else AgentParams()

    weights = DEFAULT_WEIGHTS
    fees = FEE_TIERS
    kw: dict = {}
    if cp.has_section("matrix"):
        mx = cp["matrix"]
        try:
            if "seeds" in mx:
                n = mx.getint("seeds")
                start = mx.getint("seed_start", 0)
                kw["seeds"] = tuple(range(start, start + n))
            if "n_slots" in mx:
                kw["n_slots"] = mx.getint("n_slots")
            if "window_seconds" in mx:
                kw["window_seconds"] = mx.getint("window_seconds")
            if "workers" in mx:
                kw["workers"] = mx.getint("workers")
            if "fee_tiers" in mx:
                fees = _floats(mx["fee_tiers"])
            if "agent_models" in mx:
                models = tuple(m.strip() for m in mx["agent_models"].split(",") if m.strip())
                if not set(models) <= set(AGENT_MODELS):
                    raise ConfigError(f"[matrix] agent_models must be drawn from {AGENT_MODELS}")
                kw["agent_models"] = models
        except ValueError as exc:
            raise ConfigError(f"[matrix] {exc}") from exc
        unknown = set(mx) - {"seeds", "seed_start", "n_slots", "window_seconds", "workers", "fee_tiers", "agent_models"}
        if unknown:
            raise ConfigError(f"[matrix] unknown keys {sorted(unknown)}")
    if cp.has_section("weights") or fees != FEE_TIERS:
        w = cp["weights"] if cp.has_section("weights") else {}
        try:
            weights = WeightVector(
                _floats(w["txn"]) if "txn" in w else DEFAULT_WEIGHTS.txn_weights,
                _floats(w["volume"]) if "volume" in w else DEFAULT_WEIGHTS.volume_weights,
                fees,
            )
        except ValueError as exc:
            raise ConfigError(f"[weights] {exc}") from exc
    if cp.has_section("output"):
        out = cp["output"]
        if "dir" in out:
            p = Path(out["dir"])
            kw["out_dir"] = str(p if p.is_absolute() or base is None else base / p)
        if "event_logs" in out:
            kw["write_event_logs"] = out.getboolean("event_logs")
    try:
        return MatrixConfig(market=market, params=params, fee_tiers=fees, weights=weights, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> MatrixConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)
