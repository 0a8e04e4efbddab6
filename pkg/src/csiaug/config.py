"""Key-value config documents.

Files are INI-style ``key = value`` text. Section headers are optional: a
file without any is treated as a single section. Values are parsed as JSON
when possible (numbers, lists, booleans) and kept as strings otherwise.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from pathlib import Path
from typing import Any

import numpy as np

from .channel_sim import AntennaPattern, Scenario, default_scenario, noise_variance_for_snr
from .core import TensorDims
from .errors import ConfigError


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        low = text.lower()
        if low in ("true", "yes", "on"):
            return True
        if low in ("false", "no", "off"):
            return False
        return text


def parse_text(text: str, default_section: str = "main") -> dict[str, dict[str, Any]]:
    """Parse config text into ``{section: {key: value}}``."""
    if not any(line.strip().startswith("[") for line in text.splitlines()):
        text = f"[{default_section}]\n" + text
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    return {s: {k: parse_value(v) for k, v in cp[s].items()} for s in cp.sections()}


def read_config(path: str | Path, default_section: str = "main") -> dict[str, dict[str, Any]]:
    return parse_text(Path(path).read_text(), default_section)


def as_list(v) -> list:
    if isinstance(v, list):
        return v
    if isinstance(v, str):
        return [parse_value(p) for p in v.split(",") if p.strip()]
    return [v]


def as_map(v, cast=float) -> dict:
    """``"small:1.5, large:0.75"`` or a JSON object -> dict."""
    if isinstance(v, dict):
        return {k: cast(x) for k, x in v.items()}
    out = {}
    for part in str(v).replace(";", ",").split(","):
        if part.strip():
            k, _, x = part.partition(":")
            out[k.strip()] = cast(parse_value(x))
    return out


_SCENARIO_KEYS = {
    "m", "n_rx", "n_ap", "env_tag", "seed", "noise_variance", "snr_db", "width", "height",
    "center_freq", "bandwidth", "mpc_min", "mpc_max", "tau_max", "decay", "diffuse_power_db",
    "obstruction_loss_db", "path_loss_exponent", "ap_positions", "subcarrier_freqs",
    "pattern", "pattern_file", "n_samples",
}


def scenario_from_mapping(d: dict[str, Any]) -> Scenario:
    """Build a :class:`Scenario` from config keys; unspecified keys take defaults."""
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        dims = TensorDims(int(d["m"]), int(d["n_rx"]), int(d["n_ap"]))
    except KeyError as e:
        raise ConfigError(f"scenario needs key {e.args[0]!r}") from None

    kw: dict[str, Any] = {}
    for k in ("tau_max", "decay", "diffuse_power_db", "obstruction_loss_db", "path_loss_exponent"):
        if k in d:
            kw[k] = float(d[k])
    if "mpc_min" in d or "mpc_max" in d:
        kw["mpc_count_range"] = (int(d.get("mpc_min", 4)), int(d.get("mpc_max", d.get("mpc_min", 12))))
    pattern = d.get("pattern", "isotropic")
    if "pattern_file" in d:
        z = np.load(d["pattern_file"])
        kw["pattern"] = AntennaPattern("tabulated", z["azimuths"], z["elevations"], z["freqs"], z["gains"])
    elif pattern != "isotropic":
        raise ConfigError("a tabulated pattern needs pattern_file")

    sc = default_scenario(
        dims,
        env_tag=str(d.get("env_tag", "LOS")),
        seed=int(d.get("seed", 0)),
        noise_variance=float(d.get("noise_variance", 0.0)),
        width=float(d.get("width", 10.0)),
        height=float(d.get("height", 8.0)),
        center_freq=float(d.get("center_freq", 5.21e9)),
        bandwidth=float(d.get("bandwidth", 80e6)),
        **kw,
    )
    over = {}
    if "ap_positions" in d:
        over["ap_positions"] = np.asarray(d["ap_positions"], dtype=float)
    if "subcarrier_freqs" in d:
        over["subcarrier_freqs"] = np.asarray(d["subcarrier_freqs"], dtype=float)
    if over:
        sc = dataclasses.replace(sc, **over)
    if "snr_db" in d:
        if "noise_variance" in d:
            raise ConfigError("give either noise_variance or snr_db, not both")
        var = noise_variance_for_snr(sc, float(d["snr_db"]))
        sc = dataclasses.replace(sc, noise_variance=var)
    return sc


def scenario_to_mapping(sc: Scenario) -> dict[str, Any]:
    """JSON-friendly echo of a resolved scenario."""
    return {
        "m": sc.dims.n_subcarriers, "n_rx": sc.dims.n_rx, "n_ap": sc.dims.n_ap,
        "env_tag": sc.env_tag, "seed": sc.seed, "noise_variance": sc.noise_variance,
        "area": list(sc.area), "ap_positions": sc.ap_positions.tolist(),
        "subcarrier_freqs": sc.subcarrier_freqs.tolist(),
        "mpc_count_range": list(sc.mpc_count_range), "tau_max": sc.tau_max, "decay": sc.decay,
        "diffuse_power_db": sc.diffuse_power_db, "obstruction_loss_db": sc.obstruction_loss_db,
        "path_loss_exponent": sc.path_loss_exponent, "pattern": sc.pattern.kind,
    }


def load_scenario(path: str | Path) -> tuple[Scenario, dict[str, Any]]:
    """Scenario from a file, plus any keys of its section not used by the scenario."""
    sections = read_config(path, default_section="scenario")
    d = dict(sections.get("scenario") or next(iter(sections.values())))
    extra = {k: d.pop(k) for k in ("n_samples",) if k in d}
    return scenario_from_mapping(d), extra
