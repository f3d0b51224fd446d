"""Synthetic workload IR: call graphs of functions holding loop nests.

Programs here carry their own ground truth: every instrumentable nest has
hidden per-level miss coefficients, and ``ground_truth_misses`` is the
generator that training later has to recover.  Loop bounds come in three
flavors (compile-time constant, entry-time parameter, data dependent) and
all randomness flows through explicitly passed seeded generators so that a
(program, params, seed) triple fully determines an execution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import (
    MalformedLoopError,
    SchemaError,
    UnresolvedBoundError,
)

# --------------------------------------------------------------------------
# Bound specifications


@dataclass(frozen=True)
class Constant:
    value: int


@dataclass(frozen=True)
class Param:
    """Bound resolved from the parameter map at nest entry."""

    name: str


@dataclass(frozen=True)
class DataDependent:
    """Trip count only known after the loop runs; drawn per nest entry.

    Draws are normal(mean, stddev) rounded to int and clamped at ``min``.
    """

    mean: float
    stddev: float
    min: int = 1


@dataclass(frozen=True)
class Normalized:
    """Bound produced by loop normalization: ceil((base - start) / step)."""

    base: "BoundSpec"
    start: int
    step: int


BoundSpec = Constant | Param | DataDependent | Normalized


def resolve_bound(bound: BoundSpec, params: dict[str, int], rng: np.random.Generator,
                  data_scale: float = 1.0) -> int:
    """Resolve one bound to a concrete non-negative iteration count.

    ``data_scale`` shifts DataDependent draws only; Constant and Param
    bounds are visible at the pre-header and never drift.
    """
    if isinstance(bound, Constant):
        return int(bound.value)
    if isinstance(bound, Param):
        if bound.name not in params:
            raise UnresolvedBoundError(f"no value for loop-bound parameter {bound.name!r}")
        return int(params[bound.name])
    if isinstance(bound, DataDependent):
        draw = rng.normal(bound.mean * data_scale, bound.stddev * data_scale)
        return max(int(bound.min), int(round(draw)))
    if isinstance(bound, Normalized):
        base = resolve_bound(bound.base, params, rng, data_scale)
        if bound.step < 0:
            if base > bound.start:
                raise MalformedLoopError(
                    f"negative step {bound.step} with open upper bound {base} diverges")
            return 0
        return max(0, math.ceil((base - bound.start) / bound.step))
    raise TypeError(f"unknown bound kind: {bound!r}")


# --------------------------------------------------------------------------
# Loop / program structure


@dataclass
class Work:
    instructions_per_iteration: int


@dataclass
class CallSite:
    """Call to another function.

    ``bindings`` maps callee parameter names to bounds in caller scope:
    Constant/Param values are visible at any enclosing pre-header, while a
    DataDependent binding models an argument computed inside the caller
    body (unavailable until the call actually happens).  ``calls`` is only
    used for calls into recursion cycles and gives the distribution of
    total cycle iterations triggered by one call.
    """

    callee: str
    bindings: dict[str, BoundSpec] = field(default_factory=dict)
    calls: DataDependent | None = None


@dataclass
class Conditional:
    prob: float
    body: list = field(default_factory=list)


@dataclass
class Loop:
    id: str
    bound: BoundSpec
    start: int = 0
    step: int = 1
    body: list = field(default_factory=list)  # Work | Loop | CallSite | Conditional

    def child_loop(self) -> "Loop | None":
        loops = [item for item in self.body if isinstance(item, Loop)]
        if len(loops) > 1:
            raise MalformedLoopError(f"loop {self.id} has {len(loops)} sibling inner loops; "
                                     "only rectangular chains are supported")
        return loops[0] if loops else None

    def work_per_iteration(self) -> int:
        return sum(item.instructions_per_iteration for item in self.body
                   if isinstance(item, Work))


@dataclass
class LoopNest:
    """A rectangular chain of loops plus its hidden miss generator.

    ``true_coeffs`` has length depth+1 and feeds the prefix-product
    polynomial: misses = c0 + c1*lb1 + c2*lb1*lb2 + ... with a single
    multiplicative noise factor per execution.
    """

    root: Loop
    true_coeffs: tuple[float, ...]
    noise_frac: float = 0.0

    def __post_init__(self):
        self.true_coeffs = tuple(float(c) for c in self.true_coeffs)
        if not 0.0 <= self.noise_frac <= 0.5:
            raise SchemaError(f"noise_frac {self.noise_frac} outside [0, 0.5]")
        if len(self.true_coeffs) != self.depth + 1:
            raise SchemaError(
                f"nest {self.root.id}: {len(self.true_coeffs)} coefficients for depth {self.depth}")
        if any(c < 0 for c in self.true_coeffs):
            raise SchemaError(f"nest {self.root.id}: negative ground-truth coefficient")

    @property
    def spine(self) -> list[Loop]:
        loops = []
        cur: Loop | None = self.root
        while cur is not None:
            loops.append(cur)
            cur = cur.child_loop()
        return loops

    @property
    def depth(self) -> int:
        return len(self.spine)


@dataclass
class Function:
    name: str
    body: list = field(default_factory=list)  # Loop | CallSite | Work | Conditional


@dataclass
class Program:
    name: str
    functions: dict[str, Function]
    entry: str
    nests: dict[str, LoopNest]
    repeats: int = 1
    instrumented: bool = True

    def __post_init__(self):
        if self.entry not in self.functions:
            raise SchemaError(f"entry function {self.entry!r} not defined")
        for target, site in self.call_sites():
            if target not in self.functions:
                raise SchemaError(f"call to undefined function {target!r}")
        seen: set[str] = set()
        for loop in self.all_loops():
            if loop.id in seen:
                raise SchemaError(f"duplicate loop id {loop.id!r}")
            seen.add(loop.id)

    def call_sites(self):
        for fn in self.functions.values():
            stack = list(fn.body)
            while stack:
                item = stack.pop()
                if isinstance(item, CallSite):
                    yield item.callee, item
                elif isinstance(item, (Loop, Conditional)):
                    stack.extend(item.body)

    def all_loops(self):
        for fn in self.functions.values():
            stack = list(fn.body)
            while stack:
                item = stack.pop()
                if isinstance(item, Loop):
                    yield item
                    stack.extend(item.body)
                elif isinstance(item, Conditional):
                    stack.extend(item.body)

    def call_graph(self) -> dict[str, set[str]]:
        graph: dict[str, set[str]] = {name: set() for name in self.functions}
        for fn in self.functions.values():
            stack = list(fn.body)
            while stack:
                item = stack.pop()
                if isinstance(item, CallSite):
                    graph[fn.name].add(item.callee)
                elif isinstance(item, (Loop, Conditional)):
                    stack.extend(item.body)
        return graph


# --------------------------------------------------------------------------
# Operations


def normalize_loop(loop: Loop) -> Loop:
    """Rewrite a loop to start at 0 with unit step, preserving trip count.

    For (start=s, bound=N, step=d, condition i<N) the normalized bound is
    ceil((N-s)/d); constants fold immediately, symbolic bounds get wrapped.
    Trip counts that would come out negative clamp to zero. A zero step is
    malformed; a negative step is only accepted when it yields an empty
    range (otherwise the loop never terminates).
    """
    if loop.step == 0:
        raise MalformedLoopError(f"loop {loop.id} has step 0")
    body = [normalize_loop(item) if isinstance(item, Loop) else item for item in loop.body]
    if loop.start == 0 and loop.step == 1:
        return Loop(loop.id, loop.bound, 0, 1, body)
    if isinstance(loop.bound, Constant):
        if loop.step < 0:
            if loop.bound.value > loop.start:
                raise MalformedLoopError(
                    f"loop {loop.id}: negative step with open upper bound never terminates")
            count = 0
        else:
            count = max(0, math.ceil((loop.bound.value - loop.start) / loop.step))
        return Loop(loop.id, Constant(count), 0, 1, body)
    return Loop(loop.id, Normalized(loop.bound, loop.start, loop.step), 0, 1, body)


def normalize_program(program: Program) -> Program:
    functions = {}
    for name, fn in program.functions.items():
        body = [normalize_loop(item) if isinstance(item, Loop) else item for item in fn.body]
        functions[name] = Function(name, body)
    nests = {}
    for nest_id, nest in program.nests.items():
        root = _find_loop(functions, nest.root.id)
        nests[nest_id] = LoopNest(root if root is not None else normalize_loop(nest.root),
                                  nest.true_coeffs, nest.noise_frac)
    return Program(program.name, functions, program.entry, nests,
                   program.repeats, program.instrumented)


def _find_loop(functions: dict[str, Function], loop_id: str) -> Loop | None:
    for fn in functions.values():
        stack = list(fn.body)
        while stack:
            item = stack.pop()
            if isinstance(item, Loop):
                if item.id == loop_id:
                    return item
                stack.extend(item.body)
            elif isinstance(item, Conditional):
                stack.extend(item.body)
    return None


def resolve_bounds(nest: LoopNest, params: dict[str, int], rng: np.random.Generator,
                   data_scale: float = 1.0) -> tuple[int, ...]:
    """Resolve every level of a nest to concrete trip counts.

    Pure in (nest, params, seed): the same seeded generator state always
    yields the same tuple.
    """
    return tuple(resolve_bound(loop.bound, params, rng, data_scale) for loop in nest.spine)


def miss_polynomial(coeffs: tuple[float, ...], bounds: tuple[int, ...] | tuple[float, ...]) -> float:
    total = coeffs[0]
    prod = 1.0
    for coeff, bound in zip(coeffs[1:], bounds):
        prod *= bound
        total += coeff * prod
    return total


def ground_truth_misses(nest: LoopNest, bounds: tuple[int, ...],
                        rng: np.random.Generator) -> float:
    """Hidden miss generator: the nest polynomial with multiplicative noise.

    The perturbation factor is uniform on [1-noise_frac, 1+noise_frac] and
    drawn once per execution.
    """
    if len(bounds) != nest.depth:
        raise ValueError(f"nest {nest.root.id}: {len(bounds)} bounds for depth {nest.depth}")
    clean = miss_polynomial(nest.true_coeffs, bounds)
    factor = 1.0 + (2.0 * rng.random() - 1.0) * nest.noise_frac
    return clean * factor


def nest_instructions(nest: LoopNest, bounds: tuple[int, ...]) -> float:
    """Total instructions retired by one execution of the nest."""
    total = 0.0
    prod = 1.0
    for loop, bound in zip(nest.spine, bounds):
        prod *= bound
        total += loop.work_per_iteration() * prod
    return total


# --------------------------------------------------------------------------
# Structured text schema (programs)


def _parse_bound(raw, where: str) -> BoundSpec:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise SchemaError(f"{where}: bound must be one of const/param/data, got {raw!r}")
    (kind, val), = raw.items()
    if kind == "const":
        if not isinstance(val, int) or val < 1:
            raise SchemaError(f"{where}: const bound must be a positive integer")
        return Constant(val)
    if kind == "param":
        return Param(str(val))
    if kind == "data":
        try:
            mean, stddev = float(val["mean"]), float(val["stddev"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{where}: data bound needs mean and stddev") from exc
        minimum = int(val.get("min", 1))
        if mean <= 0 or stddev < 0 or minimum < 1:
            raise SchemaError(f"{where}: data bound needs mean>0, stddev>=0, min>=1")
        return DataDependent(mean, stddev, minimum)
    raise SchemaError(f"{where}: unknown bound kind {kind!r}")


def _parse_body(raw, loops: dict, where: str) -> list:
    body = []
    for i, item in enumerate(raw or []):
        ctx = f"{where}[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(f"{ctx}: body items must be mappings")
        if "loop" in item:
            loop_id = item["loop"]
            if loop_id not in loops:
                raise SchemaError(f"{ctx}: undefined loop {loop_id!r}")
            body.append(loops[loop_id])
        elif "call" in item:
            bindings = {}
            for k, v in (item.get("bind") or {}).items():
                bindings[k] = _parse_bound(v, f"{ctx}.bind.{k}")
            calls = None
            if "calls" in item:
                spec = _parse_bound(item["calls"], f"{ctx}.calls")
                if not isinstance(spec, DataDependent):
                    raise SchemaError(f"{ctx}: recursion call count must be a data bound")
                calls = spec
            body.append(CallSite(item["call"], bindings, calls))
        elif "work" in item:
            body.append(Work(int(item["work"])))
        elif "cond" in item:
            cond = item["cond"]
            body.append(Conditional(float(cond["prob"]),
                                    _parse_body(cond.get("body"), loops, f"{ctx}.cond")))
        else:
            raise SchemaError(f"{ctx}: expected one of loop/call/work/cond")
    return body


def program_from_dict(doc: dict) -> Program:
    if doc.get("version") != 1:
        raise SchemaError(f"unsupported program schema version {doc.get('version')!r}")
    raw_loops = doc.get("loops") or {}
    loops: dict[str, Loop] = {}
    for loop_id, spec in raw_loops.items():
        loops[loop_id] = Loop(loop_id, _parse_bound(spec["bound"], f"loops.{loop_id}"),
                              int(spec.get("start", 0)), int(spec.get("step", 1)))
    for loop_id, spec in raw_loops.items():
        body = _parse_body(spec.get("body"), loops, f"loops.{loop_id}.body")
        if "work" in spec:
            body.insert(0, Work(int(spec["work"])))
        loops[loop_id].body = body
    functions = {}
    for name, spec in (doc.get("functions") or {}).items():
        functions[name] = Function(name, _parse_body(spec.get("body"), loops,
                                                     f"functions.{name}.body"))
    nests = {}
    for nest_id, spec in (doc.get("nests") or {}).items():
        if nest_id.startswith("rec:"):
            root = Loop(nest_id, Constant(1))  # placeholder root for recursion regions
        elif nest_id in loops:
            root = loops[nest_id]
        else:
            raise SchemaError(f"nests.{nest_id}: no such loop")
        nests[nest_id] = LoopNest(root, tuple(spec["coeffs"]),
                                  float(spec.get("noise_frac", 0.0)))
    try:
        return Program(doc.get("name", "program"), functions, doc["entry"], nests,
                       int(doc.get("repeats", 1)), bool(doc.get("instrumented", True)))
    except KeyError as exc:
        raise SchemaError(f"program document missing key {exc}") from exc


def load_program(path) -> Program:
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: program file must hold a mapping")
    return program_from_dict(doc)
