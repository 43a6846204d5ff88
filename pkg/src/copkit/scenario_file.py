"""Plain-text scenario files.

Layout::

    [constants]
    tx_power_dbm = 43.0
    ...
    [scenario]
    rng_seed = 42
    ...
    [sectors]
    sector_id,x,y,azimuth_deg,is_target,load
    0,0.0,0.0,30.0,1,1.0
    [users]
    ue_id,x,y,traffic_demand
    0,12.5,-80.1,1.0

Floats are written with ``repr`` so a round trip is exact.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .scenario import NetworkScenario, RadioConstants, ScenarioError, Sector, UserEquipment

MAGIC = "# copkit scenario v1"
SECTOR_HEADER = "sector_id,x,y,azimuth_deg,is_target,load"
USER_HEADER = "ue_id,x,y,traffic_demand"


def _pair(v) -> str:
    return ",".join(repr(float(x)) for x in v)


def dumps(scenario: NetworkScenario) -> str:
    lines = [MAGIC, "[constants]"]
    for f in fields(RadioConstants):
        lines.append(f"{f.name} = {getattr(scenario.constants, f.name)!r}")
    lines += [
        "[scenario]",
        f"rng_seed = {scenario.rng_seed}",
        f"non_target_cio_db = {scenario.non_target_cio_db!r}",
        f"non_target_hom_db = {scenario.non_target_hom_db!r}",
        f"prb_count = {scenario.prb_count}",
        f"gather_center = {_pair(scenario.gather_center)}",
        f"gather_radius_m = {scenario.gather_radius_m!r}",
        f"bounds = {_pair(scenario.bounds)}",
        "[sectors]",
        SECTOR_HEADER,
    ]
    for s in scenario.sectors:
        x, y = s.site_position
        lines.append(f"{s.sector_id},{x!r},{y!r},{s.azimuth_deg!r},{int(s.is_target)},{s.load!r}")
    lines += ["[users]", USER_HEADER]
    for u in scenario.users:
        x, y = u.position
        lines.append(f"{u.ue_id},{x!r},{y!r},{u.traffic_demand!r}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> NetworkScenario:
    if not text.startswith(MAGIC):
        raise ScenarioError(f"line 1: expected '{MAGIC}'")
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is None:
            raise ScenarioError(f"line {lineno}: content outside any section")
        else:
            sections[current].append((lineno, line))

    for name in ("constants", "scenario", "sectors", "users"):
        if name not in sections:
            raise ScenarioError(f"missing [{name}] section")

    def kv(name):
        out = {}
        for lineno, line in sections[name]:
            if "=" not in line:
                raise ScenarioError(f"line {lineno}: expected key = value")
            k, v = (p.strip() for p in line.split("=", 1))
            out[k] = (lineno, v)
        return out

    const_kv = kv("constants")
    known = {f.name for f in fields(RadioConstants)}
    unknown = set(const_kv) - known
    if unknown:
        raise ScenarioError(f"unknown constants: {sorted(unknown)}")
    values = {}
    for k, (lineno, v) in const_kv.items():
        try:
            values[k] = float(v)
        except ValueError:
            raise ScenarioError(f"line {lineno}: bad {k}: {v}") from None
    try:
        constants = RadioConstants(**values)
    except ValueError as exc:
        raise ScenarioError(f"[constants]: {exc}") from exc

    sc = kv("scenario")

    def get(key, conv):
        if key not in sc:
            raise ScenarioError(f"[scenario] missing {key}")
        lineno, v = sc[key]
        try:
            return conv(v)
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: bad {key}: {v}") from exc

    def floats(v):
        return tuple(float(x) for x in v.split(","))

    def records(name, header, ncols):
        rows = sections[name]
        if not rows or rows[0][1] != header:
            raise ScenarioError(f"[{name}] must start with header '{header}'")
        for lineno, line in rows[1:]:
            parts = line.split(",")
            if len(parts) != ncols:
                raise ScenarioError(f"line {lineno}: expected {ncols} fields, got {len(parts)}")
            yield lineno, parts

    sectors, users = [], []
    for lineno, p in records("sectors", SECTOR_HEADER, 6):
        try:
            sectors.append(Sector(int(p[0]), (float(p[1]), float(p[2])), float(p[3]), bool(int(p[4])), float(p[5])))
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from exc
    for lineno, p in records("users", USER_HEADER, 4):
        try:
            users.append(UserEquipment(int(p[0]), (float(p[1]), float(p[2])), float(p[3])))
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: {exc}") from exc

    return NetworkScenario(
        constants=constants,
        sectors=tuple(sectors),
        users=tuple(users),
        rng_seed=get("rng_seed", int),
        non_target_cio_db=get("non_target_cio_db", float),
        non_target_hom_db=get("non_target_hom_db", float),
        prb_count=get("prb_count", int),
        gather_center=get("gather_center", floats),
        gather_radius_m=get("gather_radius_m", float),
        bounds=get("bounds", floats),
    )


def write_scenario(scenario: NetworkScenario, path) -> None:
    Path(path).write_text(dumps(scenario))


def read_scenario(path) -> NetworkScenario:
    return loads(Path(path).read_text())
