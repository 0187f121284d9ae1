"""Deterministic multi-developer simulator and the coordinated-vs-checkin
comparison harness.

One scenario script can drive two models: the coordination kernel (edits
admitted against locks, only buildable states propagate) and the baseline
repository (isolated working copies, conflicts surface at checkin). Running
both on the same script yields the headline metric: conflicts_prevented, the
number of baseline merge conflicts the kernel turned into early denials.

Execution is a single-threaded discrete-event loop over virtual time; ties
break by (developer name, script line). Identical inputs produce
byte-identical traces.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field

from . import baseline as baseline_mod
from . import editops
from .scenario import Action, ScenarioScript, parse_scenario
from .synckernel import Kernel, KernelError, OFF_RECORD, ON_RECORD


class ScenarioAssertionError(AssertionError):
    """An expect= assertion failed; the message carries the mismatch."""


@dataclass
class Metrics:
    model: str
    commits: int = 0
    lock_denials: int = 0
    total_blocked_virtual_ms: int = 0
    conflicts: int = 0  # kernel: rebase failures; baseline: merge conflicts
    reconcile_conflicts: int = 0
    merge_invocations: int = 0
    checkins: int = 0

    _KEYS = (
        "checkins",
        "commits",
        "conflicts",
        "lock_denials",
        "merge_invocations",
        "reconcile_conflicts",
        "total_blocked_virtual_ms",
    )

    def to_lines(self) -> list[str]:
        return [f"{self.model}_{key}={getattr(self, key)}" for key in self._KEYS]


@dataclass
class RunResult:
    model: str
    metrics: Metrics
    trace_lines: list[str]
    final_text: str
    engine: object  # Kernel or BaselineRepo, for invariant probes in tests


@dataclass
class SimOutcome:
    scenario: str
    mode: str
    results: dict[str, RunResult]
    conflicts_prevented: int | None

    @property
    def trace_lines(self) -> list[str]:
        lines: list[str] = []
        for model in ("ssd", "baseline"):
            if model in self.results:
                lines.extend(self.results[model].trace_lines)
        return lines

    def report_lines(self) -> list[str]:
        lines = [f"scenario={self.scenario}", f"mode={self.mode}"]
        for model in ("ssd", "baseline"):
            if model in self.results:
                lines.extend(self.results[model].metrics.to_lines())
        if self.conflicts_prevented is not None:
            lines.append(f"conflicts_prevented={self.conflicts_prevented}")
        return lines

    def table(self) -> str:
        rows = [("metric", "ssd", "baseline")]
        for key in Metrics._KEYS:
            rows.append(
                (
                    key,
                    str(getattr(self.results["ssd"].metrics, key)) if "ssd" in self.results else "-",
                    str(getattr(self.results["baseline"].metrics, key))
                    if "baseline" in self.results
                    else "-",
                )
            )
        if self.conflicts_prevented is not None:
            rows.append(("conflicts_prevented", str(self.conflicts_prevented), ""))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join(
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
            for row in rows
        )


def _heap_entries(script: ScenarioScript) -> list[tuple[int, str, int, int]]:
    return [(a.vt, a.dev, a.line, 0) for a in script.actions]


class _SsdRun:
    def __init__(self, script: ScenarioScript, probe=None):
        self.script = script
        self.probe = probe
        self.now = 0
        self.kernel = Kernel(script.project_text, script.config, clock=lambda: self.now)
        for dev in script.developers:
            self.kernel.register(dev)
        self.trace: list[str] = []
        self.metrics = Metrics("ssd")
        self.retry_eid: dict[int, int] = {}
        self.first_vt: dict[int, int] = {}
        self._drained = 0

    def _drain(self) -> None:
        for event in self.kernel.events[self._drained :]:
            self.trace.append(
                json.dumps(
                    {"model": "ssd", "vt": self.now, "event": event.to_record()}, sort_keys=True
                )
            )
            self._drained += 1

    def _note(self, **payload) -> None:
        self.trace.append(
            json.dumps({"model": "ssd", "vt": self.now, "note": payload}, sort_keys=True)
        )

    def _abort(self, action: Action, expected: str, actual: str) -> None:
        raise ScenarioAssertionError(
            f"{self.script.name} line {action.line} ({action.dev} {action.verb}):\n"
            f"  expected: {expected}\n"
            f"  actual:   {actual}"
        )

    def _unexpected_error(self, action: Action, exc: KernelError) -> None:
        if action.expect == f"error:{exc.code}":
            self._note(action="expected_error", dev=action.dev, code=exc.code, line=action.line)
            return
        if action.expect is not None:
            self._abort(action, action.expect, f"error:{exc.code} ({exc.message})")
        self._note(
            action="error", dev=action.dev, code=exc.code, message=exc.message, line=action.line
        )

    def _edit(self, action: Action, attempt: int, heap) -> None:
        if self.kernel.devs[action.dev].mode == OFF_RECORD:
            if action.expect is not None:
                self._abort(action, action.expect, "buffered off the record")
            try:
                op, report = self.kernel.buffer_edit(action.dev, action.request())
            except KernelError as exc:
                self._unexpected_error(action, exc)
                return
            self._note(
                action="buffered",
                dev=action.dev,
                kind=op.kind,
                target=op.target,
                status=report.status,
            )
            return
        target = action.target if attempt == 0 else self.retry_eid[action.line]
        request = editops.EditRequest(action.verb, target, dict(action.args))
        try:
            outcome = self.kernel.request_edit(action.dev, request)
        except KernelError as exc:
            self._unexpected_error(action, exc)
            return
        if action.expect is not None and action.expect.startswith("error:"):
            self._abort(action, action.expect, "granted" if outcome.granted else "denied")
        if outcome.granted:
            if attempt == 0 and action.expect == "denied":
                self._abort(action, "denied", "granted")
            if attempt > 0:
                self.metrics.total_blocked_virtual_ms += self.now - self.first_vt[action.line]
            return
        if attempt == 0:
            self.first_vt[action.line] = self.now
            self.retry_eid[action.line] = outcome.events[0].details["target"]
        if action.retry.kind == "until_granted":
            if attempt + 1 < action.retry.attempts:
                heapq.heappush(
                    heap, (self.now + action.retry.backoff_ms, action.dev, action.line, attempt + 1)
                )
            else:
                self._note(
                    action="gave_up", dev=action.dev, line=action.line, attempts=attempt + 1
                )

    def _control(self, action: Action) -> None:
        try:
            if action.verb in ("try_commit", "checkin"):
                self.kernel.try_commit(action.dev)
            elif action.verb == "revert":
                self.kernel.revert(action.dev)
            elif action.verb == "off_record":
                self.kernel.set_mode(action.dev, OFF_RECORD)
            elif action.verb == "on_record":
                self.kernel.set_mode(action.dev, ON_RECORD)
        except KernelError as exc:
            self._unexpected_error(action, exc)
            return
        if action.expect is not None:
            self._abort(action, action.expect, "succeeded")

    def run(self) -> RunResult:
        heap = _heap_entries(self.script)
        heapq.heapify(heap)
        by_line = {a.line: a for a in self.script.actions}
        while heap:
            vt, _dev, line, attempt = heapq.heappop(heap)
            self.now = vt
            action = by_line[line]
            self.kernel.check_leases(vt)
            self._drain()
            if action.is_edit:
                self._edit(action, attempt, heap)
            else:
                self._control(action)
            self._drain()
            if self.probe is not None:
                self.probe(self.kernel)
        for event in self.kernel.events:
            if event.kind == "committed":
                self.metrics.commits += 1
            elif event.kind == "lock_denied":
                self.metrics.lock_denials += 1
            elif event.kind == "reverted" and event.details.get("reason") == "rebase-failure":
                self.metrics.conflicts += 1
            elif event.kind == "reconcile_result" and event.details.get("result") == "conflict":
                self.metrics.reconcile_conflicts += 1
        return RunResult("ssd", self.metrics, self.trace, self.kernel.snapshot.text, self.kernel)


class _BaselineRun:
    def __init__(self, script: ScenarioScript):
        self.script = script
        self.now = 0
        self.repo = baseline_mod.BaselineRepo(script.project_text)
        for dev in script.developers:
            self.repo.register(dev)
        self.trace: list[str] = []
        self.metrics = Metrics("baseline")

    def _note(self, **payload) -> None:
        self.trace.append(
            json.dumps({"model": "baseline", "vt": self.now, "note": payload}, sort_keys=True)
        )

    def _step(self, action: Action) -> None:
        # expect= and retry= encode coordination outcomes; the baseline has
        # no admission step, so they are ignored here by design
        if action.is_edit:
            try:
                op = self.repo.edit(action.dev, action.request())
            except editops.OpError as exc:
                self._note(
                    action="error",
                    dev=action.dev,
                    code=exc.code,
                    message=exc.message,
                    line=action.line,
                )
                return
            self._note(action="edit", dev=action.dev, kind=op.kind, target=op.target)
            return
        if action.verb in ("try_commit", "checkin"):
            result = self.repo.checkin(action.dev)
            self.metrics.checkins += 1
            if result.changed:
                self.metrics.commits += 1
            self.metrics.conflicts += len(result.conflicts)
            self._note(
                action="checkin",
                dev=action.dev,
                version=result.version,
                changed=result.changed,
                merged=result.merged,
                conflicts=[c.to_record() for c in result.conflicts],
            )
        elif action.verb == "revert":
            self.repo.revert(action.dev)
            self._note(action="revert", dev=action.dev)
        else:  # off_record / on_record have no baseline meaning
            self._note(action="ignored", dev=action.dev, verb=action.verb)

    def run(self) -> RunResult:
        heap = _heap_entries(self.script)
        heapq.heapify(heap)
        by_line = {a.line: a for a in self.script.actions}
        while heap:
            vt, _dev, line, _attempt = heapq.heappop(heap)
            self.now = vt
            self._step(by_line[line])
        self.metrics.merge_invocations = self.repo.merge_invocations
        return RunResult(
            "baseline", self.metrics, self.trace, self.repo.central_text(), self.repo
        )


def run_scenario(script: ScenarioScript, mode: str | None = None, probe=None) -> SimOutcome:
    """Run one or both models over the script. `probe(kernel)` is called
    after every simulated step of the kernel run (invariant checks)."""
    mode = mode or script.mode
    if mode not in ("ssd", "baseline", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    results: dict[str, RunResult] = {}
    if mode in ("ssd", "both"):
        results["ssd"] = _SsdRun(script, probe=probe).run()
    if mode in ("baseline", "both"):
        results["baseline"] = _BaselineRun(script).run()
    prevented = None
    if mode == "both":
        prevented = max(0, results["baseline"].metrics.conflicts - results["ssd"].metrics.conflicts)
    return SimOutcome(script.name, mode, results, prevented)


def compare(script: ScenarioScript) -> SimOutcome:
    return run_scenario(script, "both")


# ---------------------------------------------------------------------------
# Bundled fixtures. The files under scenarios/ carry the same content; a test
# pins them together so the on-disk copies cannot drift.

GOLDEN_PROJECT = """\
class Demo {
    void Foo(int i) {
    }
}
"""

GOLDEN_SCRIPT = """\
format: 1
project: usecase.mj
developers: alice bob
mode: both
auto_commit: false

10 bob rename_method Demo.Foo new_name=Foo1
20 bob add_param Demo.Foo1 type=in name=newParam
30 alice rename_method Demo.Foo new_name=Foo2 expect=denied retry=until_granted attempts=5 backoff=40
40 bob set_param_type Demo.Foo1.newParam type=int
50 bob try_commit
80 alice try_commit
"""

INEVITABLE_PROJECT = """\
class Demo {
    int someVar;

    void m2() {
        int otherVar = someVar;
    }
}
"""

INEVITABLE_SCRIPT = """\
format: 1
project: inevitable.mj
developers: dev1 dev2
mode: both
auto_commit: false

10 dev1 rename_field Demo.someVar new_name=newSomeVar
20 dev2 replace_statement Demo.m2/body[0] text="int otherVar = someVar + 1;" expect=denied
30 dev1 try_commit
40 dev2 try_commit expect=error:empty-overlay
"""

OFFRECORD_PROJECT = """\
class Demo {
    int someVar;

    void m2() {
        int otherVar = someVar;
    }
}
"""

OFFRECORD_OFF_SCRIPT = """\
format: 1
project: offrecord.mj
developers: carol dana
mode: ssd
auto_commit: false

10 carol off_record
20 carol replace_statement Demo.m2/body[0] text="int otherVar = someVar + 1;"
30 dana rename_field Demo.someVar new_name=renamedVar
40 dana try_commit
50 carol on_record
"""

OFFRECORD_ON_SCRIPT = """\
format: 1
project: offrecord.mj
developers: carol dana
mode: ssd
auto_commit: false

10 carol replace_statement Demo.m2/body[0] text="int otherVar = someVar + 1;"
30 dana rename_field Demo.someVar new_name=renamedVar expect=denied retry=until_granted attempts=5 backoff=30
40 carol try_commit
90 dana try_commit
"""


def golden_script() -> ScenarioScript:
    return parse_scenario(GOLDEN_SCRIPT, name="usecase.ssd", project_text=GOLDEN_PROJECT)


def inevitable_script() -> ScenarioScript:
    return parse_scenario(INEVITABLE_SCRIPT, name="inevitable.ssd", project_text=INEVITABLE_PROJECT)


def offrecord_scripts() -> tuple[ScenarioScript, ScenarioScript]:
    off = parse_scenario(
        OFFRECORD_OFF_SCRIPT, name="offrecord_off.ssd", project_text=OFFRECORD_PROJECT
    )
    on = parse_scenario(
        OFFRECORD_ON_SCRIPT, name="offrecord_on.ssd", project_text=OFFRECORD_PROJECT
    )
    return off, on


def run_inevitable_conflict_fixture() -> SimOutcome:
    """Both models over the rename-vs-reference fixture: the baseline records
    exactly one conflict on the statement, the kernel denies the edit."""
    return run_scenario(inevitable_script(), "both")


# ---------------------------------------------------------------------------
# Generators


def make_project(classes: int = 34, fields: int = 4, methods: int = 5, stmts: int = 3) -> str:
    """A synthetic project for load measurements: each method takes one
    parameter and references class fields. Defaults yield ~1,000 elements."""
    chunks = []
    for c in range(classes):
        lines = [f"class C{c} {{"]
        for f in range(fields):
            lines.append(f"    int f{f} = {f};")
        for m in range(methods):
            lines.append("")
            lines.append(f"    void m{m}(int p{m}) {{")
            for s in range(stmts):
                lines.append(f"        f{(m + s) % fields} = f{s % fields} + {s};")
            lines.append("    }")
        lines.append("}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


_RANDOM_PROJECT = """\
class Shared {
    int f0;
    int f1 = 1;
    int f2 = 2;
    int f3 = 3;

    void m0() {
        f0 = f1 + 1;
        f1 = f2;
    }

    void m1() {
        f2 = f3 + 2;
        int a0 = f0;
    }

    void m2() {
        f3 = f0 + f1;
        int a1 = f2;
    }
}
"""

_STMT_TARGETS = [
    "Shared.m0/body[0]",
    "Shared.m0/body[1]",
    "Shared.m1/body[0]",
    "Shared.m1/body[1]",
    "Shared.m2/body[0]",
    "Shared.m2/body[1]",
]
_FIELDS = ["Shared.f0", "Shared.f1", "Shared.f2", "Shared.f3"]
_METHOD_BODIES = ["Shared.m0/body", "Shared.m1/body", "Shared.m2/body"]


def generate_scenario(seed: int, edits: int = 54, commit_every: int = 4) -> ScenarioScript:
    """Seeded random 3-developer script over a shared class, tuned so
    dependent-pair contention is common. Deterministic per seed."""
    rng = random.Random(seed)
    devs = ["d0", "d1", "d2"]
    lines = []
    vt = 0
    counter = 0
    per_dev_edits = {d: 0 for d in devs}
    for _ in range(edits):
        vt += rng.randrange(5, 16)
        dev = rng.choice(devs)
        counter += 1
        roll = rng.random()
        if roll < 0.40:
            target = rng.choice(_STMT_TARGETS)
            lhs = f"f{rng.randrange(4)}"
            rhs = f"f{rng.randrange(4)}"
            text = f"{lhs} = {rhs} + {rng.randrange(10)};"
            lines.append(f'{vt} {dev} replace_statement {target} text="{text}"')
        elif roll < 0.60:
            target = rng.choice(_FIELDS)
            lines.append(f"{vt} {dev} set_field_init {target} init={rng.randrange(100)}")
        elif roll < 0.72:
            target = rng.choice(_METHOD_BODIES)
            text = f"int t{counter} = f{rng.randrange(4)};"
            lines.append(f'{vt} {dev} insert_statement {target} text="{text}"')
        elif roll < 0.82:
            target = rng.choice(_FIELDS)
            lines.append(f"{vt} {dev} rename_field {target} new_name=rn{counter}")
        elif roll < 0.92:
            lines.append(f"{vt} {dev} add_field Shared type=int name=g{counter}")
        else:
            target = rng.choice(["Shared.m0", "Shared.m1", "Shared.m2"])
            lines.append(f"{vt} {dev} rename_method {target} new_name=mn{counter}")
        per_dev_edits[dev] += 1
        if per_dev_edits[dev] % commit_every == 0:
            vt += 1
            lines.append(f"{vt} {dev} try_commit")
    for dev in devs:
        vt += 10
        lines.append(f"{vt} {dev} try_commit")
    text = (
        "format: 1\n"
        "project: shared.mj\n"
        f"developers: {' '.join(devs)}\n"
        "mode: both\n"
        "auto_commit: false\n\n" + "\n".join(lines) + "\n"
    )
    return parse_scenario(text, name=f"random-{seed}.ssd", project_text=_RANDOM_PROJECT)
