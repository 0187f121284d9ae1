"""Scenario scripts: timed multi-developer action lists driving the
simulator and the network client.

A script is a versioned text file: header lines (`key: value`), then one
action per line:

    VIRTUAL_TIME_MS  DEVELOPER  VERB  [TARGET]  [key=value ...]

Verbs are the semantic edit kinds plus try_commit / checkin (synonyms,
mapped to the model being run), revert, off_record, on_record. Targets are
qualified names; `expect=denied` / `expect=error:CODE` assert an outcome,
`retry=until_granted attempts=N backoff=MS` encodes a developer who waits.
The full grammar lives in docs/scenarios.md.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path

from . import editops
from .synckernel import KernelConfig

FORMAT_VERSION = 1

MODES = ("ssd", "baseline", "both")

CONTROL_VERBS = frozenset(["try_commit", "checkin", "revert", "off_record", "on_record"])
VERBS = CONTROL_VERBS | editops.EDIT_KINDS

# which option keys each edit kind forwards into EditRequest.args
_INT_ARGS = frozenset(["at"])
_EDIT_ARG_KEYS = frozenset(["name", "new_name", "type", "ret", "init", "text", "at", "slot"])
_OPTION_KEYS = _EDIT_ARG_KEYS | {"expect", "retry", "attempts", "backoff"}

# edit kinds whose target is a container path / omitted entirely
_NO_TARGET = frozenset(["create_class"])


class ScenarioError(ValueError):
    """Malformed scenario file; message carries the line number."""


@dataclass(frozen=True)
class RetryPolicy:
    kind: str = "fail"  # "fail" | "until_granted"
    attempts: int = 10
    backoff_ms: int = 10


@dataclass(frozen=True)
class Action:
    line: int
    vt: int
    dev: str
    verb: str
    target: str | None
    args: dict
    expect: str | None  # None | "denied" | "error:CODE"
    retry: RetryPolicy

    @property
    def is_edit(self) -> bool:
        return self.verb in editops.EDIT_KINDS

    def request(self) -> editops.EditRequest:
        return editops.EditRequest(self.verb, self.target, dict(self.args))


@dataclass
class ScenarioScript:
    name: str
    project: str  # path as written in the header
    project_text: str
    developers: list[str]
    mode: str
    config: KernelConfig
    actions: list[Action] = field(default_factory=list)


def _parse_action(line_no: int, line: str, developers: list[str]) -> Action:
    try:
        tokens = shlex.split(line, comments=True)
    except ValueError as exc:
        raise ScenarioError(f"line {line_no}: {exc}") from None
    if len(tokens) < 3:
        raise ScenarioError(f"line {line_no}: expected 'VT DEV VERB ...'")
    try:
        vt = int(tokens[0])
    except ValueError:
        raise ScenarioError(f"line {line_no}: virtual time must be an integer, got {tokens[0]!r}") from None
    if vt < 0:
        raise ScenarioError(f"line {line_no}: virtual time must be >= 0")
    dev, verb = tokens[1], tokens[2]
    if dev not in developers:
        raise ScenarioError(f"line {line_no}: undeclared developer {dev!r}")
    if verb not in VERBS:
        raise ScenarioError(f"line {line_no}: unknown verb {verb!r}")
    rest = tokens[3:]
    target: str | None = None
    if rest and "=" not in rest[0]:
        target = rest[0]
        rest = rest[1:]
    options: dict[str, str] = {}
    for token in rest:
        key, sep, value = token.partition("=")
        if not sep or key not in _OPTION_KEYS:
            raise ScenarioError(f"line {line_no}: bad option {token!r}")
        options[key] = value

    if verb in editops.EDIT_KINDS:
        if verb not in _NO_TARGET and target is None:
            raise ScenarioError(f"line {line_no}: {verb} requires a target")
    else:
        if target is not None:
            raise ScenarioError(f"line {line_no}: {verb} takes no target")
        for key in options:
            if key in _EDIT_ARG_KEYS:
                raise ScenarioError(f"line {line_no}: {verb} takes no {key}=")

    args: dict = {}
    for key in _EDIT_ARG_KEYS & options.keys():
        args[key] = int(options[key]) if key in _INT_ARGS else options[key]

    expect = options.get("expect")
    if expect is not None and expect != "denied" and not expect.startswith("error:"):
        raise ScenarioError(f"line {line_no}: expect= must be 'denied' or 'error:CODE'")
    if expect is not None and verb not in editops.EDIT_KINDS and expect == "denied":
        raise ScenarioError(f"line {line_no}: expect=denied only applies to edits")

    retry_kind = options.get("retry", "fail")
    if retry_kind not in ("fail", "until_granted"):
        raise ScenarioError(f"line {line_no}: retry= must be 'fail' or 'until_granted'")
    try:
        policy = RetryPolicy(
            retry_kind,
            int(options.get("attempts", "10")),
            int(options.get("backoff", "10")),
        )
    except ValueError:
        raise ScenarioError(f"line {line_no}: attempts=/backoff= must be integers") from None
    if policy.attempts < 1 or policy.backoff_ms < 0:
        raise ScenarioError(f"line {line_no}: attempts must be >= 1 and backoff >= 0")
    return Action(line_no, vt, dev, verb, target, args, expect, policy)


def parse_scenario(text: str, name: str = "<inline>", project_text: str | None = None) -> ScenarioScript:
    """Parse a script. `project_text` overrides loading the project file (used
    for in-memory scenarios); otherwise call load_scenario to resolve it."""
    header: dict[str, str] = {}
    actions: list[Action] = []
    developers: list[str] = []
    in_header = True
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if in_header and not line[0].isdigit():
            key, sep, value = (p.strip() for p in line.partition(":"))
            if not sep or not value:
                raise ScenarioError(f"line {line_no}: expected 'key: value' header")
            if key in header:
                raise ScenarioError(f"line {line_no}: duplicate header {key!r}")
            header[key] = value
            continue
        if in_header:
            in_header = False
            developers = header.get("developers", "").split()
            _check_header(header, developers)
        actions.append(_parse_action(line_no, line, developers))
    if in_header:
        developers = header.get("developers", "").split()
        _check_header(header, developers)

    last_vt: dict[str, int] = {}
    for action in actions:
        if action.vt < last_vt.get(action.dev, 0):
            raise ScenarioError(
                f"line {action.line}: virtual time goes backwards for {action.dev}"
            )
        last_vt[action.dev] = action.vt

    config = KernelConfig(
        auto_commit=header.get("auto_commit", "true") == "true",
        lock_lease_ms=int(header.get("lock_lease_ms", "0")),
    )
    return ScenarioScript(
        name,
        header.get("project", ""),
        project_text if project_text is not None else "",
        developers,
        header.get("mode", "both"),
        config,
        actions,
    )


def _check_header(header: dict[str, str], developers: list[str]) -> None:
    if header.get("format") != str(FORMAT_VERSION):
        raise ScenarioError(f"missing or unsupported 'format:' header (expected {FORMAT_VERSION})")
    if not developers:
        raise ScenarioError("header must declare at least one developer")
    if len(set(developers)) != len(developers):
        raise ScenarioError("duplicate developer names in header")
    mode = header.get("mode", "both")
    if mode not in MODES:
        raise ScenarioError(f"mode must be one of {', '.join(MODES)}, got {mode!r}")
    if header.get("auto_commit", "true") not in ("true", "false"):
        raise ScenarioError("auto_commit must be true or false")
    try:
        lease = int(header.get("lock_lease_ms", "0"))
    except ValueError:
        raise ScenarioError("lock_lease_ms must be an integer") from None
    if lease < 0:
        raise ScenarioError("lock_lease_ms must be >= 0")
    unknown = set(header) - {"format", "project", "developers", "mode", "auto_commit", "lock_lease_ms"}
    if unknown:
        raise ScenarioError(f"unknown header keys: {', '.join(sorted(unknown))}")


def load_scenario(path: str | Path) -> ScenarioScript:
    """Load a script file; the project file is resolved relative to it."""
    path = Path(path)
    script = parse_scenario(path.read_text(), name=path.name)
    if not script.project:
        raise ScenarioError(f"{path}: header must name a project file")
    project_path = path.parent / script.project
    script.project_text = project_path.read_text()
    return script
