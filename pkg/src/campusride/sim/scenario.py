"""Scenario file format.

Line-oriented, `#` comments. Directives:

    scenario <name>
    graph default|<path>          # road network the service runs on
    tick <seconds>                # virtual time advanced per step
    store memory|file             # persistence backing for the run
    actor admin|rider|driver <id> [key=value ...]
    riders <count> prefix=<p>     # bulk-declare rider group r<p>001..
    do <actor|*> <command> [args ...]
    expect <kind> [args ...]

Commands and expectation kinds are interpreted by the runner; adding a new
experiment needs only a new file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..errors import ServiceError


class ScenarioInvalid(ServiceError):
    code = "scenario_invalid"


@dataclass(frozen=True)
class ActorDecl:
    role: str  # admin | rider | driver
    actor_id: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Step:
    actor: str  # actor id or "*" for the rider group
    command: str
    args: tuple[str, ...] = ()


@dataclass(frozen=True)
class Expectation:
    kind: str
    args: tuple[str, ...] = ()


@dataclass(frozen=True)
class Scenario:
    name: str
    graph: str = "default"
    tick: float = 1.0
    store: str = "memory"
    actors: tuple[ActorDecl, ...] = ()
    rider_group: tuple[int, str] = (0, "")  # (count, prefix)
    steps: tuple[Step, ...] = ()
    expectations: tuple[Expectation, ...] = ()

    def actor_ids(self) -> set[str]:
        ids = {a.actor_id for a in self.actors}
        count, prefix = self.rider_group
        ids |= {f"{prefix}{i:03d}" for i in range(1, count + 1)}
        return ids


def _parse_params(tokens: list[str]) -> dict:
    params = {}
    for tok in tokens:
        if "=" not in tok:
            raise ScenarioInvalid(f"expected key=value, got {tok!r}")
        key, value = tok.split("=", 1)
        params[key] = value
    return params


def parse_scenario(text: str, name_hint: str = "unnamed") -> Scenario:
    name = name_hint
    graph = "default"
    tick = 1.0
    store = "memory"
    actors: list[ActorDecl] = []
    rider_group = (0, "")
    steps: list[Step] = []
    expectations: list[Expectation] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        directive, rest = parts[0], parts[1:]
        try:
            if directive == "scenario":
                (name,) = rest
            elif directive == "graph":
                (graph,) = rest
            elif directive == "tick":
                (value,) = rest
                tick = float(value)
            elif directive == "store":
                (store,) = rest
                if store not in ("memory", "file"):
                    raise ScenarioInvalid(f"line {lineno}: store must be memory or file")
            elif directive == "actor":
                role, actor_id, *params = rest
                if role not in ("admin", "rider", "driver"):
                    raise ScenarioInvalid(f"line {lineno}: unknown role {role!r}")
                actors.append(ActorDecl(role, actor_id, _parse_params(params)))
            elif directive == "riders":
                count, *params = rest
                prefix = _parse_params(params).get("prefix", "r")
                rider_group = (int(count), prefix)
            elif directive == "do":
                actor, command, *args = rest
                steps.append(Step(actor, command, tuple(args)))
            elif directive == "expect":
                kind, *args = rest
                expectations.append(Expectation(kind, tuple(args)))
            else:
                raise ScenarioInvalid(f"line {lineno}: unknown directive {directive!r}")
        except ValueError as exc:
            raise ScenarioInvalid(f"line {lineno}: {exc}") from exc

    scenario = Scenario(
        name=name,
        graph=graph,
        tick=tick,
        store=store,
        actors=tuple(actors),
        rider_group=rider_group,
        steps=tuple(steps),
        expectations=tuple(expectations),
    )
    _validate(scenario)
    return scenario


def _validate(s: Scenario) -> None:
    if s.tick <= 0:
        raise ScenarioInvalid("tick must be positive")
    ids = s.actor_ids()
    declared_ids = [a.actor_id for a in s.actors]
    if len(declared_ids) != len(set(declared_ids)):
        raise ScenarioInvalid("duplicate actor ids")
    for step in s.steps:
        if step.actor != "*" and step.actor not in ids:
            raise ScenarioInvalid(f"step references undeclared actor {step.actor!r}")
    if any(step.actor == "*" for step in s.steps) and s.rider_group[0] == 0:
        raise ScenarioInvalid("'*' steps require a riders group")


def bundled_dir():
    return resources.files("campusride.sim.scenarios")


def list_bundled() -> list[str]:
    names = []
    for entry in bundled_dir().iterdir():
        if entry.name.endswith(".scenario"):
            names.append(entry.name[: -len(".scenario")])
    return sorted(names)


def load_scenario(name_or_path: str) -> Scenario:
    """Load a bundled scenario by name, or any path to a scenario file."""
    path = Path(name_or_path)
    if path.suffix == ".scenario" and path.exists():
        return parse_scenario(path.read_text(), name_hint=path.stem)
    bundled = bundled_dir() / f"{name_or_path}.scenario"
    try:
        text = bundled.read_text()
    except FileNotFoundError:
        raise ScenarioInvalid(f"no scenario named {name_or_path!r}") from None
    return parse_scenario(text, name_hint=name_or_path)
