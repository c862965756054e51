"""Scene adapter: rulebook-driven, tolerance-bounded edits to a scene.

Adaptations are expressed as actions (gain, tilt, reposition, time shift,
decorrelation, reverb scaling, prune, regroup). Each action is clamped to the
touched object's editorial tolerances and ordered so lower-priority perceptual
properties are modified first. apply_rules composes everything over a rulebook
and returns a new scene plus a report; the input scene is never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .context import MIN_NOISE_BLOCK, ContextualInfo, ListenerInfo, estimate_intelligibility
from .dsp import OCTAVE_CENTERS_HZ, Directive, apply_directives, object_seed
from .errors import NoDialogueObject, NonPositiveTau, UnknownProperty
from .geometry import Direction3, wrap_azimuth
from .rules import AdaptationRule, RuleAction, context_namespace, object_namespace
from .scene import (
    LEVEL_DB_MAX,
    LEVEL_DB_MIN,
    AudioObject,
    EditorialConstraints,
    ObjectType,
    ReverbMetadata,
    Scene,
)

# Intelligibility ladder sizing. The escalation direction is fixed (duck, then
# tilt, then displace, then decorrelate); these constants size the steps.
LADDER_STEP_CAP_DB = 6.0
LADDER_SLOPE_DB_PER_DEFICIT = 20.0
LADDER_REPOSITION_DEG_PER_DB = 5.0
LADDER_RESIDUAL_THRESHOLD = 0.05
LADDER_DECORRELATE_AMOUNT = 0.5

PERSONALIZE_DB = 3.0

# Stand-in for an unbounded decay when the room alone already rings longer
# than the production intent.
MAX_TAU_S = 1.0e6

# Perceptual property each action kind trades against; keys are the only
# valid AdaptationAction kinds.
ACTION_PROPERTY = {
    "GainOffset": "level",
    "SpectralTilt": "level",
    "Reposition": "position",
    "TimeShift": "velocity",
    "Decorrelate": "locatedness",
    "ReverbTailScale": "envelopment",
    "Prune": "scale",
    "Regroup": "scale",
}


@dataclass(frozen=True)
class AdaptationAction:
    """One adaptation applied to one object.

    value carries the payload for scalar kinds: dB for GainOffset and
    SpectralTilt, milliseconds for TimeShift, a 0..1 amount for Decorrelate,
    a multiplicative factor for ReverbTailScale. Reposition uses the
    (daz_deg, del_deg) pair instead. ReverbTailScale may name a single tail
    band via band_center_hz (None scales every band). reason records the
    rule that requested the action.
    """

    object_id: str
    kind: str
    value: float = 0.0
    daz_deg: float = 0.0
    del_deg: float = 0.0
    group: str | None = None
    band_center_hz: float | None = None
    reason: str = ""


def action_magnitude(action: AdaptationAction) -> float:
    """The size compared against tolerances: |dB|, |ms|, amount, |factor - 1|,
    or the angular displacement norm for Reposition."""
    if action.kind == "Reposition":
        return math.hypot(action.daz_deg, action.del_deg)
    if action.kind == "ReverbTailScale":
        return abs(action.value - 1.0)
    if action.kind in ("Prune", "Regroup"):
        return 0.0
    return abs(action.value)


def tolerance_bound(kind: str, constraints: EditorialConstraints) -> float:
    """The tolerance an action magnitude is held to (inf = unbounded)."""
    tol = constraints.tolerances
    bounds = {
        "GainOffset": tol.level_db,
        "SpectralTilt": tol.spectral_tilt_db,
        "Reposition": tol.position_deg,
        "TimeShift": tol.time_shift_ms,
        "Decorrelate": 1.0,
        "ReverbTailScale": tol.reverb_scale,
        "Prune": math.inf,
        "Regroup": math.inf,
    }
    if kind not in bounds:
        raise UnknownProperty(f"unknown action kind {kind!r}")
    return bounds[kind]


def _clip(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def clamp_to_tolerances(action: AdaptationAction,
                        constraints: EditorialConstraints) -> AdaptationAction:
    """Clamp an action into the object's editorial tolerances.

    Scalar magnitudes clamp into [-tol, +tol]; ReverbTailScale factors into
    [1 - tol, 1 + tol]; Reposition displacement vectors are rescaled so their
    norm fits the position tolerance. Prune and Regroup pass through.
    """
    tol = constraints.tolerances
    kind = action.kind
    if kind not in ACTION_PROPERTY:
        raise UnknownProperty(f"unknown action kind {kind!r}")
    if kind in ("Prune", "Regroup"):
        return action
    if kind == "GainOffset":
        return replace(action, value=_clip(action.value, -tol.level_db, tol.level_db))
    if kind == "SpectralTilt":
        return replace(action, value=_clip(
            action.value, -tol.spectral_tilt_db, tol.spectral_tilt_db))
    if kind == "TimeShift":
        return replace(action, value=_clip(
            action.value, -tol.time_shift_ms, tol.time_shift_ms))
    if kind == "Decorrelate":
        return replace(action, value=_clip(action.value, 0.0, 1.0))
    if kind == "ReverbTailScale":
        value = _clip(action.value, 1.0 - tol.reverb_scale, 1.0 + tol.reverb_scale)
        # 1 - tol need not be representable; walk back until the factor's
        # distance from 1 honors the bound exactly
        while abs(value - 1.0) > tol.reverb_scale:
            value = math.nextafter(value, 1.0)
        return replace(action, value=value)
    norm = math.hypot(action.daz_deg, action.del_deg)
    if norm <= tol.position_deg or norm == 0.0:
        return action
    s = tol.position_deg / norm
    daz, dle = action.daz_deg * s, action.del_deg * s
    # rounding in the rescale can leave the norm a few ulp over the bound;
    # shrinking s until it fits keeps the clamp ceiling hard and idempotent
    while math.hypot(daz, dle) > tol.position_deg:
        s = math.nextafter(s, 0.0)
        daz, dle = action.daz_deg * s, action.del_deg * s
    return replace(action, daz_deg=daz, del_deg=dle)


def resolve_priority(requested, constraints: EditorialConstraints,
                     budget: int | None = None) -> list[AdaptationAction]:
    """Order actions so the most expendable perceptual properties go first.

    constraints.priority_order lists properties most-protected first; the
    result is a stable sort by descending position in that order. A budget
    truncates from the end, so the actions touching the most protected
    properties are the ones dropped.
    """
    order = constraints.priority_order

    def rank(action: AdaptationAction) -> int:
        prop = ACTION_PROPERTY.get(action.kind)
        if prop is None:
            raise UnknownProperty(f"unknown action kind {action.kind!r}")
        if prop not in order:
            raise UnknownProperty(
                f"property {prop!r} not in priority order {order}")
        return -order.index(prop)

    ranked = sorted(requested, key=rank)
    if budget is not None and max(budget, 0) < len(ranked):
        ranked = ranked[:max(budget, 0)]
    return ranked


# ---------------------------------------------------------------------------
# intelligibility ladder

def _mono_preview(obj: AudioObject, window) -> np.ndarray:
    parts = []
    for stem in obj.stems:
        s = np.asarray(stem.samples, dtype=float)
        if window is not None:
            s = s[window[0]:window[1]]
        parts.append(s)
    if not parts:
        return np.zeros(0)
    n = max(len(p) for p in parts)
    acc = np.zeros(n)
    for p in parts:
        acc[:len(p)] += p
    return acc / len(parts)


def _preview_mix(objs, sample_rate, window, length, gains_db=None, tilts_db=None):
    gains_db = gains_db or {}
    tilts_db = tilts_db or {}
    mix = np.zeros(length)
    for obj in objs:
        sig = _mono_preview(obj, window)
        if not len(sig):
            continue
        sig = sig * 10.0 ** ((obj.level_db + gains_db.get(obj.object_id, 0.0)) / 20.0)
        tilt = tilts_db.get(obj.object_id, 0.0)
        if abs(tilt) > 1e-12:
            sig = apply_directives(sig, [Directive("spectral_tilt", tilt)], sample_rate)
        mix[:len(sig)] += sig
    return mix


def _projected_residual(scene: Scene, deficit: float, dialogue, others,
                        emitted, window) -> float:
    """deficit minus the proxy-intelligibility gain of the emitted actions.

    Previews are mono mixdowns, so only level and spectral changes register;
    spatial and decorrelation rungs project as zero gain (conservative).
    """
    gains: dict[str, float] = {}
    tilts: dict[str, float] = {}
    for action in emitted:
        clamped = clamp_to_tolerances(
            action, scene.object_by_id(action.object_id).constraints)
        if clamped.kind == "GainOffset":
            gains[clamped.object_id] = gains.get(clamped.object_id, 0.0) + clamped.value
        elif clamped.kind == "SpectralTilt":
            tilts[clamped.object_id] = tilts.get(clamped.object_id, 0.0) + clamped.value
    length = max(
        max(((len(s.samples) if window is None else window[1] - window[0])
             for o in (*dialogue, *others) for s in o.stems), default=0),
        MIN_NOISE_BLOCK,
    )
    speech = _preview_mix(dialogue, scene.sample_rate, window, length)
    before = _preview_mix(others, scene.sample_rate, window, length)
    after = _preview_mix(others, scene.sample_rate, window, length, gains, tilts)
    score_before = estimate_intelligibility(speech, before, scene.sample_rate)
    score_after = estimate_intelligibility(speech, after, scene.sample_rate)
    return deficit - max(score_after - score_before, 0.0)


def _rung_reposition(others, dialogue, step_db, reason):
    dialogue_positions = [d for d in dialogue if d.position is not None]
    actions = []
    for obj in others:
        if obj.position is None:
            continue
        if dialogue_positions:
            nearest = min(
                dialogue_positions,
                key=lambda d: abs(wrap_azimuth(obj.position.az_deg - d.position.az_deg)))
            rel = wrap_azimuth(obj.position.az_deg - nearest.position.az_deg)
        else:
            rel = wrap_azimuth(obj.position.az_deg)
        away = 1.0 if rel >= 0.0 else -1.0
        actions.append(AdaptationAction(
            obj.object_id, "Reposition",
            daz_deg=away * step_db * LADDER_REPOSITION_DEG_PER_DB, reason=reason))
    return actions


def intelligibility_boost(scene: Scene, ctx: ContextualInfo,
                          window: tuple[int, int] | None = None,
                          reason: str = "intelligibility_ladder"):
    """Escalating masker adaptations sized by the intelligibility deficit.

    Rung 1 ducks every non-dialogue object by step = min(deficit * 20 dB,
    6 dB); rungs 2-4 (spectral tilt -step, reposition away from the nearest
    dialogue azimuth by step * 5 degrees, decorrelate 0.5) are appended one at
    a time while the preceding rungs, clamped to each object's tolerances,
    leave a projected deficit above 0.05. window limits the preview to a
    sample range of the stems.
    """
    deficit = ctx.high_level.intelligibility_deficit
    if deficit <= 0.0:
        return []
    dialogue = [o for o in scene.objects if o.object_type is ObjectType.DIALOGUE]
    if not dialogue:
        raise NoDialogueObject("the intelligibility ladder needs a dialogue object")
    others = [o for o in scene.objects if o.object_type is not ObjectType.DIALOGUE]
    if not others:
        return []
    step = min(deficit * LADDER_SLOPE_DB_PER_DEFICIT, LADDER_STEP_CAP_DB)

    emitted = [AdaptationAction(o.object_id, "GainOffset", -step, reason=reason)
               for o in others]
    later_rungs = (
        lambda: [AdaptationAction(o.object_id, "SpectralTilt", -step, reason=reason)
                 for o in others],
        lambda: _rung_reposition(others, dialogue, step, reason),
        lambda: [AdaptationAction(o.object_id, "Decorrelate",
                                  LADDER_DECORRELATE_AMOUNT, reason=reason)
                 for o in others],
    )
    for build in later_rungs:
        residual = _projected_residual(scene, deficit, dialogue, others, emitted, window)
        if residual <= LADDER_RESIDUAL_THRESHOLD:
            break
        rung = build()
        # a rung can be empty (nothing to reposition); escalation continues
        emitted.extend(rung)
    return emitted


# ---------------------------------------------------------------------------
# personalization

def _team_role(group: str) -> tuple[str, str]:
    team, _, role = group.partition("_")
    return team, role


def personalize_levels(scene: Scene, listener: ListenerInfo | None,
                       reason: str = "personalize"):
    """Level offsets favouring the listener's team.

    Group labels follow "<team>" or "<team>_<role>". Groups on the preferred
    team gain +3 dB; groups on a different team sharing a role with some
    preferred group (its opposite number) lose 3 dB. Groups with no preferred
    counterpart are left alone.
    """
    preference = (listener.team_preference or "") if listener is not None else ""
    if not preference:
        return []
    preferred_roles = {
        _team_role(o.group)[1] for o in scene.objects
        if o.group and _team_role(o.group)[0] == preference
    }
    actions = []
    for obj in scene.objects:
        if not obj.group:
            continue
        team, role = _team_role(obj.group)
        if team == preference:
            actions.append(AdaptationAction(
                obj.object_id, "GainOffset", PERSONALIZE_DB, reason=reason))
        elif role in preferred_roles:
            actions.append(AdaptationAction(
                obj.object_id, "GainOffset", -PERSONALIZE_DB, reason=reason))
    return actions


# ---------------------------------------------------------------------------
# reverb adaptation

def adapt_reverb(reverb: ReverbMetadata, room_decay_tau_s, target_tau_s,
                 scale_tolerance: float | None = None):
    """Refit production decay constants so production + room lands on target.

    Exponential envelopes multiply, so decay rates add: the combined constant
    obeys 1/tau_combined = 1/tau_production + 1/tau_room. Solving for the
    production constant that combines with the room to hit the target gives
    tau_p' = tau_t * tau_r / (tau_r - tau_t) when tau_r > tau_t; otherwise the
    room alone already rings past the target, the band is marked infeasible,
    and the constant pins at MAX_TAU_S. room_decay_tau_s and target_tau_s
    align with reverb.tail_bands. scale_tolerance, when given, clamps each new
    constant to within that factor of the band's original value.

    Returns (new ReverbMetadata, per-band feasibility flags).
    """
    room = tuple(float(t) for t in room_decay_tau_s)
    target = tuple(float(t) for t in target_tau_s)
    bands = reverb.tail_bands
    if len(room) != len(bands) or len(target) != len(bands):
        raise ValueError(
            f"adapt_reverb needs one room and one target decay constant per "
            f"tail band ({len(bands)} bands, {len(room)} room, {len(target)} target)")
    if any(t <= 0.0 for t in room + target) or any(b.decay_tau_s <= 0.0 for b in bands):
        raise NonPositiveTau("decay constants must all be > 0")
    new_bands = []
    feasible = []
    for band, tau_r, tau_t in zip(bands, room, target):
        if tau_r > tau_t:
            tau_p = tau_t * tau_r / (tau_r - tau_t)
            ok = True
        else:
            tau_p = MAX_TAU_S
            ok = False
        if scale_tolerance is not None:
            factor = _clip(tau_p / band.decay_tau_s,
                           1.0 - scale_tolerance, 1.0 + scale_tolerance)
            tau_p = band.decay_tau_s * factor
        new_bands.append(replace(band, decay_tau_s=tau_p))
        feasible.append(ok)
    return replace(reverb, tail_bands=tuple(new_bands)), tuple(feasible)


def room_tau_at(band_centers_hz, room_tau_octaves) -> np.ndarray:
    """Room decay constants interpolated from the octave centres to arbitrary
    band centres (linear in log frequency, edge values held)."""
    taus = np.asarray(room_tau_octaves, dtype=float)
    if len(taus) != len(OCTAVE_CENTERS_HZ):
        raise ValueError(
            f"room decay needs {len(OCTAVE_CENTERS_HZ)} octave values, got {len(taus)}")
    return np.interp(np.log(np.asarray(band_centers_hz, dtype=float)),
                     np.log(np.array(OCTAVE_CENTERS_HZ)), taus)


# ---------------------------------------------------------------------------
# rule application

@dataclass(frozen=True)
class AppliedAction:
    action: AdaptationAction          # as applied, post-clamping
    requested: float                  # magnitude before clamping
    clamped: float                    # magnitude actually applied


@dataclass(frozen=True)
class SkippedAction:
    action: AdaptationAction
    reason: str


@dataclass(frozen=True)
class AdaptationReport:
    """What apply_rules did: applied actions with requested vs clamped
    magnitudes, skipped actions with reasons, and net per-object deltas as
    (object_id, property, signed total) records."""

    applied: tuple[AppliedAction, ...] = ()
    skipped: tuple[SkippedAction, ...] = ()
    deltas: tuple[tuple[str, str, float], ...] = ()


_DIRECT_KIND_MAP = {
    "gain_offset": "GainOffset",
    "spectral_tilt": "SpectralTilt",
    "reposition": "Reposition",
    "time_shift": "TimeShift",
    "decorrelate": "Decorrelate",
    "reverb_tail_scale": "ReverbTailScale",
    "prune": "Prune",
    "regroup": "Regroup",
}


def _expand_direct(template: RuleAction, scene: Scene, rule_id: str):
    kind = _DIRECT_KIND_MAP[template.kind]
    params = dict(template.params)
    actions = []
    for obj in scene.objects:
        if template.select is not None and not template.select.holds(
                object_namespace(obj)):
            continue
        if kind == "Reposition":
            actions.append(AdaptationAction(
                obj.object_id, kind, daz_deg=params["daz_deg"],
                del_deg=params["del_deg"], reason=rule_id))
        elif kind == "Regroup":
            actions.append(AdaptationAction(
                obj.object_id, kind, group=params["group"], reason=rule_id))
        elif kind == "Prune":
            actions.append(AdaptationAction(obj.object_id, kind, reason=rule_id))
        else:
            value = params["db"] if "db" in params else next(iter(params.values()))
            actions.append(AdaptationAction(
                obj.object_id, kind, value=float(value), reason=rule_id))
    return actions


def _expand_reverb_fit(scene: Scene, ctx: ContextualInfo, rule_id: str):
    room_octaves = ctx.high_level.room_decay_tau_s
    if room_octaves is None:
        return []
    actions = []
    for obj in scene.objects:
        if obj.reverb is None or not obj.reverb.tail_bands:
            continue
        centers = [b.band_center_hz for b in obj.reverb.tail_bands]
        room = room_tau_at(centers, room_octaves)
        target = [b.decay_tau_s for b in obj.reverb.tail_bands]
        refit, _feasible = adapt_reverb(obj.reverb, room, target)
        for band, new_band in zip(obj.reverb.tail_bands, refit.tail_bands):
            actions.append(AdaptationAction(
                obj.object_id, "ReverbTailScale",
                value=new_band.decay_tau_s / band.decay_tau_s,
                band_center_hz=band.band_center_hz, reason=rule_id))
    return actions


def _expand(template: RuleAction, scene: Scene, ctx: ContextualInfo,
            rule_id: str, window):
    if template.kind == "intelligibility_ladder":
        return intelligibility_boost(scene, ctx, window=window, reason=rule_id)
    if template.kind == "personalize":
        return personalize_levels(scene, ctx.high_level.listener, reason=rule_id)
    if template.kind == "reverb_fit":
        return _expand_reverb_fit(scene, ctx, rule_id)
    return _expand_direct(template, scene, rule_id)


def _apply_one(scene: Scene, action: AdaptationAction):
    """Apply one clamped action. Returns (scene, applied magnitude or None,
    skip reason or None)."""
    try:
        obj = scene.object_by_id(action.object_id)
    except KeyError:
        return scene, None, "object not in scene"
    kind = action.kind
    if kind == "Prune":
        return scene.with_objects(
            o for o in scene.objects if o.object_id != action.object_id), 0.0, None
    if kind == "GainOffset":
        new_level = _clip(obj.level_db + action.value, LEVEL_DB_MIN, LEVEL_DB_MAX)
        applied = new_level - obj.level_db
        new_obj = replace(obj, level_db=new_level)
    elif kind == "SpectralTilt":
        new_obj = replace(obj, directives=obj.directives + (
            Directive("spectral_tilt", action.value),))
        applied = action.value
    elif kind == "TimeShift":
        new_obj = replace(obj, directives=obj.directives + (
            Directive("time_shift", action.value),))
        applied = action.value
    elif kind == "Decorrelate":
        new_obj = replace(obj, directives=obj.directives + (
            Directive("decorrelate", action.value, seed=object_seed(obj.object_id)),))
        applied = action.value
    elif kind == "Reposition":
        if obj.position is None:
            return scene, None, "object has no position"
        pos = obj.position
        new_obj = replace(obj, position=Direction3(
            wrap_azimuth(pos.az_deg + action.daz_deg),
            _clip(pos.el_deg + action.del_deg, -90.0, 90.0),
            pos.distance_m))
        applied = action_magnitude(action)
    elif kind == "ReverbTailScale":
        if obj.reverb is None or not obj.reverb.tail_bands:
            return scene, None, "object has no reverb tail"
        bands = tuple(
            replace(b, decay_tau_s=b.decay_tau_s * action.value)
            if action.band_center_hz is None
            or abs(b.band_center_hz - action.band_center_hz) < 1e-9 else b
            for b in obj.reverb.tail_bands)
        new_obj = replace(obj, reverb=replace(obj.reverb, tail_bands=bands))
        applied = action.value - 1.0
    elif kind == "Regroup":
        new_obj = replace(obj, group=action.group)
        applied = 0.0
    else:
        raise UnknownProperty(f"unknown action kind {kind!r}")
    objects = tuple(new_obj if o.object_id == action.object_id else o
                    for o in scene.objects)
    return scene.with_objects(objects), applied, None


def apply_rules(scene: Scene, ctx: ContextualInfo, rulebook,
                preview_window: tuple[int, int] | None = None):
    """Evaluate a rulebook against a scene and apply the fired actions.

    Rules run in book order and later rules see the already-adapted scene.
    Each fired rule's actions are ordered by resolve_priority per object,
    clamped to that object's tolerances, then applied; metadata edits land
    directly and signal edits become deferred directives on the object.
    Returns (adapted scene, AdaptationReport); the input scene is untouched.
    """
    adapted = scene
    applied: list[AppliedAction] = []
    skipped: list[SkippedAction] = []
    deltas: dict[tuple[str, str], float] = {}
    for rule in rulebook:
        if not rule.when.holds(context_namespace(ctx, adapted)):
            continue
        requested: list[AdaptationAction] = []
        for template in rule.actions:
            try:
                requested.extend(_expand(template, adapted, ctx, rule.rule_id,
                                         preview_window))
            except NoDialogueObject as exc:
                skipped.append(SkippedAction(
                    AdaptationAction("", "GainOffset", reason=rule.rule_id), str(exc)))
        by_object: dict[str, list[AdaptationAction]] = {}
        for action in requested:
            by_object.setdefault(action.object_id, []).append(action)
        for object_id, actions in by_object.items():
            try:
                constraints = adapted.object_by_id(object_id).constraints
            except KeyError:
                for action in actions:
                    skipped.append(SkippedAction(action, "object not in scene"))
                continue
            for action in resolve_priority(actions, constraints):
                clamped = clamp_to_tolerances(action, constraints)
                adapted, magnitude, why = _apply_one(adapted, clamped)
                if why is not None:
                    skipped.append(SkippedAction(clamped, why))
                    continue
                applied.append(AppliedAction(
                    action=clamped,
                    requested=action_magnitude(action),
                    clamped=abs(magnitude),
                ))
                prop = ACTION_PROPERTY[clamped.kind]
                key = (object_id, prop)
                deltas[key] = deltas.get(key, 0.0) + (
                    magnitude if clamped.kind != "Prune" else 1.0)
    report = AdaptationReport(
        applied=tuple(applied),
        skipped=tuple(skipped),
        deltas=tuple((oid, prop, round(total, 12))
                     for (oid, prop), total in deltas.items()),
    )
    return adapted, report
