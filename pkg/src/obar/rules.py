"""Rule expressions, adaptation rulebooks, and renderer selection tables.

Conditions are small boolean expressions over named fields: comparisons,
and/or/not, parentheses, numeric and string literals. Both rulebooks and
selection tables share the grammar (documented in docs/rulebook-grammar.md);
malformed expressions fail at parse time, never at render time.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import ExpressionError, SchemaError
from .renderclass import KNOWN_RENDERER_NAMES
from .scene import ObjectType

RULEBOOK_SCHEMA_VERSION = "rulebook v1"
SELECTION_SCHEMA_VERSION = "selection v1"


# ---------------------------------------------------------------------------
# expression language

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<string>'[^']*'|"[^"]*")
  | (?P<op><=|>=|==|!=|<|>)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<minus>-)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
""", re.VERBOSE)

_KEYWORDS = {"and", "or", "not", "true", "false"}


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ExpressionError(
                f"unexpected character {text[pos]!r} at position {pos} in {text!r}")
        pos = match.end()
        kind = match.lastgroup
        if kind == "ws":
            continue
        value = match.group()
        if kind == "name" and value in _KEYWORDS:
            kind = value
        tokens.append((kind, value))
    tokens.append(("end", ""))
    return tokens


class _Node:
    def evaluate(self, namespace):  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class _Literal(_Node):
    value: object

    def evaluate(self, namespace):
        return self.value


@dataclass(frozen=True)
class _Name(_Node):
    name: str

    def evaluate(self, namespace):
        if self.name not in namespace:
            raise ExpressionError(f"unknown field {self.name!r}")
        return namespace[self.name]


@dataclass(frozen=True)
class _Compare(_Node):
    op: str
    left: _Node
    right: _Node

    def evaluate(self, namespace):
        a = self.left.evaluate(namespace)
        b = self.right.evaluate(namespace)
        if self.op == "==":
            return a == b
        if self.op == "!=":
            return a != b
        if isinstance(a, str) or isinstance(b, str) or a is None or b is None:
            raise ExpressionError(
                f"ordering comparison {self.op} needs numbers, got {a!r} and {b!r}")
        ops = {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}
        return ops[self.op]


@dataclass(frozen=True)
class _Bool(_Node):
    op: str
    parts: tuple

    def evaluate(self, namespace):
        if self.op == "and":
            return all(_truth(p.evaluate(namespace)) for p in self.parts)
        return any(_truth(p.evaluate(namespace)) for p in self.parts)


@dataclass(frozen=True)
class _Not(_Node):
    inner: _Node

    def evaluate(self, namespace):
        return not _truth(self.inner.evaluate(namespace))


@dataclass(frozen=True)
class _Negate(_Node):
    inner: _Node

    def evaluate(self, namespace):
        value = self.inner.evaluate(namespace)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ExpressionError(f"cannot negate {value!r}")
        return -value


def _truth(value) -> bool:
    if not isinstance(value, bool):
        raise ExpressionError(
            f"condition produced {value!r}; comparisons or booleans required")
    return value


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None):
        token = self.tokens[self.pos]
        if kind is not None and token[0] != kind:
            raise ExpressionError(
                f"expected {kind} but found {token[1] or 'end of input'!r} "
                f"in {self.text!r}")
        self.pos += 1
        return token

    def parse(self) -> _Node:
        node = self.or_expr()
        if self.peek()[0] != "end":
            raise ExpressionError(
                f"trailing input {self.peek()[1]!r} in {self.text!r}")
        return node

    def or_expr(self) -> _Node:
        parts = [self.and_expr()]
        while self.peek()[0] == "or":
            self.take()
            parts.append(self.and_expr())
        return parts[0] if len(parts) == 1 else _Bool("or", tuple(parts))

    def and_expr(self) -> _Node:
        parts = [self.not_expr()]
        while self.peek()[0] == "and":
            self.take()
            parts.append(self.not_expr())
        return parts[0] if len(parts) == 1 else _Bool("and", tuple(parts))

    def not_expr(self) -> _Node:
        if self.peek()[0] == "not":
            self.take()
            return _Not(self.not_expr())
        return self.comparison()

    def comparison(self) -> _Node:
        left = self.operand()
        if self.peek()[0] == "op":
            op = self.take()[1]
            right = self.operand()
            return _Compare(op, left, right)
        return left

    def operand(self) -> _Node:
        kind, value = self.peek()
        if kind == "number":
            self.take()
            return _Literal(float(value))
        if kind == "minus":
            self.take()
            return _Negate(self.operand())
        if kind == "string":
            self.take()
            return _Literal(value[1:-1])
        if kind == "true":
            self.take()
            return _Literal(True)
        if kind == "false":
            self.take()
            return _Literal(False)
        if kind == "name":
            self.take()
            return _Name(value)
        if kind == "lparen":
            self.take()
            node = self.or_expr()
            self.take("rparen")
            return node
        raise ExpressionError(
            f"expected a value but found {value or 'end of input'!r} "
            f"in {self.text!r}")


@dataclass(frozen=True)
class Expression:
    """A compiled condition; evaluate() against a flat name->value mapping."""

    source: str
    root: _Node = field(compare=False, repr=False)

    def evaluate(self, namespace) -> object:
        return self.root.evaluate(namespace)

    def holds(self, namespace) -> bool:
        return _truth(self.root.evaluate(namespace))


def compile_expression(text: str) -> Expression:
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty condition")
    return Expression(source=text, root=_Parser(text).parse())


# ---------------------------------------------------------------------------
# namespaces the expressions see

def object_namespace(obj) -> dict:
    """Fields a per-object predicate can reference."""
    pos = obj.position
    return {
        "id": obj.object_id,
        "type": obj.object_type.value,
        "group": obj.group or "",
        "priority": float(obj.priority),
        "level_db": float(obj.level_db),
        "diffuseness": float(obj.diffuseness),
        "extent_deg": float(obj.extent_deg or 0.0),
        "channels": float(obj.channels),
        "onscreen": obj.advanced.onscreen,
        "importance": float(obj.advanced.importance),
        "interactivity_restriction": obj.advanced.interactivity_restriction,
        "object_quality": float(obj.advanced.object_quality),
        "language": obj.advanced.language or "",
        "preferred_renderer": obj.advanced.preferred_renderer or "",
        "has_position": pos is not None,
        "has_distance": pos is not None and pos.distance_m is not None,
        "az_deg": float(pos.az_deg) if pos is not None else 0.0,
        "el_deg": float(pos.el_deg) if pos is not None else 0.0,
        "distance_m": float(pos.distance_m) if pos is not None and
        pos.distance_m is not None else 0.0,
        "has_reverb": obj.reverb is not None,
    }


def context_namespace(ctx, scene) -> dict:
    """Fields a scene-level rule condition can reference."""
    high = ctx.high_level
    listener = high.listener
    return {
        "intelligibility_deficit": float(high.intelligibility_deficit),
        "noise_delta_db": float(high.noise_delta_db),
        "noise_broadband_db": float(high.noise_broadband_db),
        "measured_intelligibility": (
            -1.0 if high.measured_intelligibility is None
            else float(high.measured_intelligibility)),
        "intelligibility_target": float(high.effective_intelligibility_target),
        "envelopment_target": float(high.scene_targets.envelopment),
        "speaker_count": float(high.speaker_count),
        "object_count": float(len(scene.objects)),
        "has_dialogue": any(
            o.object_type is ObjectType.DIALOGUE for o in scene.objects),
        "has_room_decay": high.room_decay_tau_s is not None,
        "hearing_impaired": bool(listener.hearing_impaired) if listener else False,
        "team_preference": (listener.team_preference or "") if listener else "",
    }


# ---------------------------------------------------------------------------
# rulebooks

_DIRECT_ACTION_PARAMS = {
    "gain_offset": {"db": float},
    "spectral_tilt": {"db": float},
    "reposition": {"daz_deg": float, "del_deg": float},
    "time_shift": {"ms": float},
    "decorrelate": {"amount": float},
    "reverb_tail_scale": {"factor": float},
    "prune": {},
    "regroup": {"group": str},
}
_COMPUTED_ACTION_KINDS = ("intelligibility_ladder", "personalize", "reverb_fit")


@dataclass(frozen=True)
class RuleAction:
    """One action template inside a rule: a kind, parameters, and an optional
    object predicate restricting which objects it touches."""

    kind: str
    params: tuple = ()
    select: Expression | None = None

    def param(self, name):
        return dict(self.params)[name]


@dataclass(frozen=True)
class AdaptationRule:
    rule_id: str
    when: Expression
    actions: tuple[RuleAction, ...]


def _parse_action(doc, rule_id: str) -> RuleAction:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise SchemaError(f"rule {rule_id}: every action needs a kind")
    kind = doc["kind"]
    extra = set(doc) - {"kind", "select"}
    if kind in _COMPUTED_ACTION_KINDS:
        if "select" in doc or extra:
            raise SchemaError(
                f"rule {rule_id}: action {kind} takes no parameters")
        return RuleAction(kind=kind)
    if kind not in _DIRECT_ACTION_PARAMS:
        raise SchemaError(f"rule {rule_id}: unknown action kind {kind!r}")
    wanted = _DIRECT_ACTION_PARAMS[kind]
    unknown = extra - set(wanted)
    if unknown:
        raise SchemaError(
            f"rule {rule_id}: action {kind} got unknown fields {sorted(unknown)}")
    params = []
    for name, typ in wanted.items():
        if name not in doc:
            raise SchemaError(f"rule {rule_id}: action {kind} needs {name}")
        value = doc[name]
        if typ is float and isinstance(value, bool) or not isinstance(
                value, (int, float) if typ is float else str):
            raise SchemaError(
                f"rule {rule_id}: action {kind} field {name} must be "
                f"{'a number' if typ is float else 'a string'}")
        params.append((name, typ(value)))
    select = compile_expression(doc["select"]) if "select" in doc else None
    return RuleAction(kind=kind, params=tuple(params), select=select)


def parse_rulebook(doc: dict) -> tuple[AdaptationRule, ...]:
    if not isinstance(doc, dict):
        raise SchemaError("rulebook must be a mapping")
    unknown = set(doc) - {"schema", "rules"}
    if unknown:
        raise SchemaError(f"rulebook has unknown fields {sorted(unknown)}")
    if doc.get("schema") != RULEBOOK_SCHEMA_VERSION:
        raise SchemaError(
            f"rulebook schema must be {RULEBOOK_SCHEMA_VERSION!r}")
    rules = []
    seen = set()
    for entry in doc.get("rules", []):
        if not isinstance(entry, dict):
            raise SchemaError("each rule must be a mapping")
        unknown = set(entry) - {"rule_id", "when", "actions"}
        if unknown:
            raise SchemaError(f"rule has unknown fields {sorted(unknown)}")
        rule_id = entry.get("rule_id")
        if not rule_id or not isinstance(rule_id, str):
            raise SchemaError("every rule needs a string rule_id")
        if rule_id in seen:
            raise SchemaError(f"duplicate rule_id {rule_id!r}")
        seen.add(rule_id)
        when = compile_expression(entry.get("when", ""))
        actions = tuple(_parse_action(a, rule_id)
                        for a in entry.get("actions", []))
        if not actions:
            raise SchemaError(f"rule {rule_id} has no actions")
        rules.append(AdaptationRule(rule_id=rule_id, when=when, actions=actions))
    return tuple(rules)


def load_rulebook(path: str) -> tuple[AdaptationRule, ...]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"rulebook {path} is not valid JSON: {exc}") from exc
    return parse_rulebook(doc)


DEFAULT_RULEBOOK_DOC = {
    "schema": RULEBOOK_SCHEMA_VERSION,
    "rules": [
        {
            "rule_id": "boost-dialogue-when-masked",
            "when": "intelligibility_deficit > 0 and has_dialogue",
            "actions": [{"kind": "intelligibility_ladder"}],
        },
        {
            "rule_id": "personalize-team-levels",
            "when": "team_preference != ''",
            "actions": [{"kind": "personalize"}],
        },
        {
            "rule_id": "fit-reverb-to-room",
            "when": "has_room_decay",
            "actions": [{"kind": "reverb_fit"}],
        },
        {
            "rule_id": "prune-filler-on-tiny-layouts",
            "when": "speaker_count <= 2",
            "actions": [
                {"kind": "prune", "select": "type == 'ambience' and priority == 0"},
            ],
        },
    ],
}


def default_rulebook() -> tuple[AdaptationRule, ...]:
    return parse_rulebook(DEFAULT_RULEBOOK_DOC)


# ---------------------------------------------------------------------------
# renderer selection tables

@dataclass(frozen=True)
class SelectionRule:
    match: Expression
    renderer: str
    order: str | int | None = None        # AmbiMM only: integer or "highest"
    subset: str = "all"                   # all | nearest_device | backdrop


def _parse_selection_rule(entry) -> SelectionRule:
    if not isinstance(entry, dict):
        raise SchemaError("each selection rule must be a mapping")
    unknown = set(entry) - {"match", "renderer", "order", "subset"}
    if unknown:
        raise SchemaError(f"selection rule has unknown fields {sorted(unknown)}")
    renderer = entry.get("renderer")
    if renderer not in KNOWN_RENDERER_NAMES:
        raise SchemaError(
            f"selection rule renderer must be one of "
            f"{sorted(KNOWN_RENDERER_NAMES)}, got {renderer!r}")
    order = entry.get("order")
    if order is not None and order != "highest" and (
            isinstance(order, bool) or not isinstance(order, int) or order < 1):
        raise SchemaError("selection rule order must be 'highest' or an int >= 1")
    subset = entry.get("subset", "all")
    if subset not in ("all", "nearest_device", "backdrop"):
        raise SchemaError(f"unknown speaker subset {subset!r}")
    return SelectionRule(
        match=compile_expression(entry.get("match", "")),
        renderer=renderer, order=order, subset=subset)


def parse_selection_rules(doc: dict) -> tuple[SelectionRule, ...]:
    if not isinstance(doc, dict):
        raise SchemaError("selection table must be a mapping")
    unknown = set(doc) - {"schema", "rules"}
    if unknown:
        raise SchemaError(f"selection table has unknown fields {sorted(unknown)}")
    if doc.get("schema") != SELECTION_SCHEMA_VERSION:
        raise SchemaError(
            f"selection schema must be {SELECTION_SCHEMA_VERSION!r}")
    rules = tuple(_parse_selection_rule(e) for e in doc.get("rules", []))
    if not rules:
        raise SchemaError("selection table needs at least one rule")
    return rules


def load_selection_rules(path: str) -> tuple[SelectionRule, ...]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(
                f"selection table {path} is not valid JSON: {exc}") from exc
    return parse_selection_rules(doc)


DEFAULT_SELECTION_DOC = {
    "schema": SELECTION_SCHEMA_VERSION,
    "rules": [
        {"match": "type == 'dialogue' and not onscreen",
         "renderer": "AP1", "subset": "nearest_device"},
        {"match": "type == 'dialogue' and onscreen", "renderer": "VBAP"},
        {"match": "type == 'ambience' or type == 'hoa'",
         "renderer": "AmbiMM", "order": "highest", "subset": "backdrop"},
        {"match": "type == 'diffuse' or diffuseness > 0.5", "renderer": "Diffuse"},
        {"match": "type == 'effect' and has_distance", "renderer": "WFS"},
        {"match": "type == 'effect'", "renderer": "VBAP"},
        {"match": "type == 'music'", "renderer": "PM"},
        {"match": "type == 'music'", "renderer": "AmbiMM", "order": "highest"},
        {"match": "true", "renderer": "AP1"},
    ],
}


def default_selection_rules() -> tuple[SelectionRule, ...]:
    return parse_selection_rules(DEFAULT_SELECTION_DOC)
