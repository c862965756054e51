"""Object router: feasibility checks, per-object renderer selection, and
crossfade scheduling between assignments.

Selection walks an ordered table of (match, renderer) rows and takes the first
row whose predicate holds and whose driving function can actually be built on
the resolved speaker subset; the final row assigns nearest-speaker panning, so
every object always gets a renderer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .context import ContextualInfo, ReproductionScenario, SpeakerLayout
from .errors import (
    NonPositiveDuration,
    NotBracketed,
    ObarError,
    SameRenderer,
    SourceInsideArray,
)
from .geometry import Direction3
from .renderclass import RendererClass, RendererKind
from .renderers import (
    PM_BETA_DEFAULT,
    DrivingFunction,
    ambi_encode,
    ambi_mm_decode,
    diffuse_gains,
    nearest_speaker_gains,
    pm_filters,
    vbap_feasible,
    vbap_gains,
    wfs_drive,
)
from .rules import (
    SelectionRule,
    context_namespace,
    default_selection_rules,
    object_namespace,
)
from .scene import AudioObject, Scene

MAX_AMBI_ORDER = 3
WFS_MAX_GAP_M = 0.5
WFS_MIN_SPEAKERS = 4
BACKDROP_MIN_ABS_AZ_DEG = 90.0
BAND_LIMIT_POWER_FRACTION = 1e-3      # -30 dB of stem energy below a speaker's low edge
DEFAULT_CROSSFADE_S = 1.0
PM_ZONE_RADIUS_M = 0.15
PM_ZONE_POINTS = 8


@dataclass(frozen=True)
class RendererAssignment:
    object_id: str
    renderer: RendererClass
    speaker_subset: tuple[str, ...]
    params: tuple = ()

    def param(self, name, default=None):
        return dict(self.params).get(name, default)


@dataclass(frozen=True)
class CrossfadeSchedule:
    object_id: str
    old: RendererAssignment
    new: RendererAssignment
    start_s: float
    duration_s: float


# ---------------------------------------------------------------------------
# feasibility

def wfs_segment(layout: SpeakerLayout) -> tuple[str, ...] | None:
    """Longest contiguous run of speakers with neighbour spacing <= 0.5 m.

    Speakers are walked in azimuth order (circularly); a run needs at least
    four speakers to support wavefront synthesis.
    """
    speakers = sorted(layout.speakers, key=lambda s: s.position.az_deg)
    count = len(speakers)
    if count < WFS_MIN_SPEAKERS:
        return None
    pts = [np.array(s.position.cartesian()) for s in speakers]
    gap_ok = [float(np.linalg.norm(pts[i] - pts[(i + 1) % count])) <= WFS_MAX_GAP_M
              for i in range(count)]
    if all(gap_ok):
        return tuple(s.speaker_id for s in speakers)
    # open the circle at a bad gap and scan linear runs
    start = (gap_ok.index(False) + 1) % count
    ordered = [(start + i) % count for i in range(count)]
    best: list[int] = []
    run = [ordered[0]]
    for idx in range(count - 1):
        a = ordered[idx]
        if gap_ok[a]:
            run.append(ordered[idx + 1])
        else:
            if len(run) > len(best):
                best = run
            run = [ordered[idx + 1]]
    if len(run) > len(best):
        best = run
    if len(best) < WFS_MIN_SPEAKERS:
        return None
    return tuple(speakers[i].speaker_id for i in best)


def max_ambi_order(speaker_count: int) -> int:
    return min((speaker_count - 1) // 2, MAX_AMBI_ORDER)


def feasible_renderers(layout: SpeakerLayout, obj: AudioObject) -> frozenset[RendererClass]:
    """Renderer classes whose arrangement requirements this layout satisfies
    for this object. Nearest-speaker panning is always present."""
    count = len(layout.speakers)
    dirs = [s.position for s in layout.speakers]
    found = {RendererClass(RendererKind.AP1_NEAREST)}
    if obj.position is not None and count >= 2 and vbap_feasible(dirs, obj.position):
        found.add(RendererClass(RendererKind.AP3_VBAP))
    for order in range(1, max_ambi_order(count) + 1):
        found.add(RendererClass(RendererKind.AMBI_MM, order))
    if wfs_segment(layout) is not None:
        found.add(RendererClass(RendererKind.WFS_GAIN_DELAY))
    if obj.position is not None and obj.position.distance_m is not None:
        found.add(RendererClass(RendererKind.PM_SINGLE_ZONE))
    if count >= 2:
        found.add(RendererClass(RendererKind.DIFFUSE))
    return frozenset(found)


def infeasibility_reasons(layout: SpeakerLayout, obj: AudioObject) -> dict[str, str]:
    """Why each absent renderer class is absent, for diagnostics."""
    count = len(layout.speakers)
    dirs = [s.position for s in layout.speakers]
    reasons: dict[str, str] = {}
    if obj.position is None:
        reasons["VBAP"] = "object has no position to pan to"
    elif count < 2:
        reasons["VBAP"] = "needs at least 2 speakers"
    elif not vbap_feasible(dirs, obj.position):
        reasons["VBAP"] = "no speaker pair or triplet brackets the direction"
    if max_ambi_order(count) < 1:
        reasons["AmbiMM"] = f"order 1 needs 3 speakers, layout has {count}"
    if count < WFS_MIN_SPEAKERS:
        reasons["WFS"] = f"needs {WFS_MIN_SPEAKERS} speakers, layout has {count}"
    elif wfs_segment(layout) is None:
        reasons["WFS"] = f"no contiguous run of {WFS_MIN_SPEAKERS}+ speakers spaced <= {WFS_MAX_GAP_M} m"
    if obj.position is None or obj.position.distance_m is None:
        reasons["PM"] = "object has no position with distance"
    if count < 2:
        reasons["Diffuse"] = "needs at least 2 speakers"
    return reasons


# ---------------------------------------------------------------------------
# speaker subsets

def _below_edge_fraction(samples: np.ndarray, sample_rate: int, edge_hz: float) -> float:
    spectrum = np.abs(np.fft.rfft(np.asarray(samples, dtype=float))) ** 2
    total = float(np.sum(spectrum))
    if total <= 0.0:
        return 0.0
    freqs = np.fft.rfftfreq(len(samples), 1.0 / sample_rate)
    return float(np.sum(spectrum[freqs < edge_hz])) / total


def band_capable_subset(speakers, obj: AudioObject, sample_rate: int):
    """Drop speakers whose low edge cuts into significant stem energy.

    If every speaker would be dropped the full subset is restored (a bad
    speaker beats silence).
    """
    if not obj.stems or obj.stems[0].samples is None or len(obj.stems[0].samples) == 0:
        return list(speakers)
    samples = obj.stems[0].samples
    kept = [
        s for s in speakers
        if _below_edge_fraction(samples, sample_rate, s.bandwidth_hz.low_hz)
        <= BAND_LIMIT_POWER_FRACTION
    ]
    return kept if kept else list(speakers)


def _resolve_subset(rule_subset: str, layout: SpeakerLayout, obj: AudioObject,
                    nearest_device: str | None, sample_rate: int):
    speakers = list(layout.speakers)
    if rule_subset == "nearest_device" and nearest_device is not None:
        return [layout.by_id(nearest_device)]
    if rule_subset == "backdrop":
        backdrop = [s for s in speakers
                    if abs(s.position.az_deg) > BACKDROP_MIN_ABS_AZ_DEG]
        if backdrop:
            speakers = backdrop
    return band_capable_subset(speakers, obj, sample_rate)


def pm_control_points(radius_m: float = PM_ZONE_RADIUS_M,
                      count: int = PM_ZONE_POINTS) -> tuple[Direction3, ...]:
    """Control zone: a small ring around the listening origin."""
    return tuple(
        Direction3(((360.0 * i / count + 180.0) % 360.0) - 180.0,
                   0.0, radius_m)
        for i in range(count))


# ---------------------------------------------------------------------------
# driving functions

def _object_direction(obj: AudioObject) -> Direction3:
    return obj.position if obj.position is not None else Direction3(0.0)


def build_drive(assignment: RendererAssignment, layout: SpeakerLayout,
                obj: AudioObject, sample_rate: int) -> DrivingFunction:
    """Realize an assignment as per-speaker gains/delays/filters."""
    speakers = [layout.by_id(sid) for sid in assignment.speaker_subset]
    dirs = [s.position for s in speakers]
    n = len(speakers)
    kind = assignment.renderer.kind
    gains = np.ones(n)
    delays = np.zeros(n)
    firs: tuple = ()

    if kind is RendererKind.AP1_NEAREST:
        gains = nearest_speaker_gains(dirs, _object_direction(obj))
    elif kind is RendererKind.AP3_VBAP:
        if obj.position is None:
            raise NotBracketed("panning needs an object position")
        gains = vbap_gains(dirs, obj.position)
    elif kind is RendererKind.AMBI_MM:
        order = assignment.renderer.order or 1
        decode = ambi_mm_decode(dirs, order)
        gains = decode @ ambi_encode(_object_direction(obj), order)
        norm = float(np.linalg.norm(gains))
        if norm <= 0.0:
            raise NotBracketed("mode-matched gains vanished")
        gains = gains / norm
    elif kind is RendererKind.WFS_GAIN_DELAY:
        if obj.position is None:
            raise SourceInsideArray("wavefront synthesis needs an object position")
        gains, delays = wfs_drive(dirs, obj.position)
    elif kind is RendererKind.PM_SINGLE_ZONE:
        if obj.position is None or obj.position.distance_m is None:
            raise SourceInsideArray("pressure matching needs a source distance")
        beta = float(assignment.param("beta", PM_BETA_DEFAULT))
        design = pm_filters(dirs, pm_control_points(), obj.position,
                            beta=beta, sample_rate=sample_rate)
        # calibrate so the reproduced zone pressure sits at stem level
        scale = 4.0 * math.pi * float(obj.position.distance_m)
        firs = tuple(f * scale for f in design.firs)
        delays = np.array(design.align_delays_s, dtype=float)
        if delays.min() < 0.0:
            delays -= delays.min()
    elif kind is RendererKind.DIFFUSE:
        gains, firs = diffuse_gains(n)
    else:  # pragma: no cover - enum is closed
        raise ObarError(f"unhandled renderer kind {kind}")

    return DrivingFunction(
        speaker_ids=assignment.speaker_subset,
        gains=np.asarray(gains, dtype=float),
        delays_s=np.asarray(delays, dtype=float),
        firs=firs,
        sample_rate=sample_rate,
    )


# ---------------------------------------------------------------------------
# selection

def _candidate(rule: SelectionRule, layout: SpeakerLayout, obj: AudioObject,
               nearest_device: str | None, sample_rate: int) -> RendererAssignment | None:
    subset = _resolve_subset(rule.subset, layout, obj, nearest_device, sample_rate)
    if not subset:
        return None
    kind = RendererClass.from_name(rule.renderer).kind
    params: list[tuple] = [("subset_kind", rule.subset)]
    order = None
    if kind is RendererKind.AMBI_MM:
        if rule.order == "highest" or rule.order is None:
            order = max_ambi_order(len(subset))
            if order < 1:
                subset = band_capable_subset(layout.speakers, obj, sample_rate)
                order = max_ambi_order(len(subset))
                params[0] = ("subset_kind", "all")
            if order < 1:
                return None
        else:
            order = int(rule.order)
            if len(subset) < 2 * order + 1:
                subset = band_capable_subset(layout.speakers, obj, sample_rate)
                params[0] = ("subset_kind", "all")
            if len(subset) < 2 * order + 1:
                return None
    elif kind is RendererKind.WFS_GAIN_DELAY:
        segment = wfs_segment(SpeakerLayout(tuple(subset)))
        if segment is None:
            return None
        by_id = {s.speaker_id: s for s in subset}
        subset = [by_id[sid] for sid in segment]
        params.append(("segment", True))
    elif kind is RendererKind.PM_SINGLE_ZONE:
        params.append(("beta", PM_BETA_DEFAULT))

    return RendererAssignment(
        object_id=obj.object_id,
        renderer=RendererClass(kind, order),
        speaker_subset=tuple(s.speaker_id for s in subset),
        params=tuple(params),
    )


def _try_build(assignment: RendererAssignment | None, layout: SpeakerLayout,
               obj: AudioObject, sample_rate: int) -> bool:
    if assignment is None:
        return False
    try:
        build_drive(assignment, layout, obj, sample_rate)
        return True
    except ObarError:
        return False


def _preferred_rule(obj: AudioObject) -> SelectionRule | None:
    name = obj.advanced.preferred_renderer
    if not name:
        return None
    preferred = RendererClass.from_name(name)
    from .rules import compile_expression
    return SelectionRule(
        match=compile_expression("true"),
        renderer=preferred.kind.value,
        order=preferred.order if preferred.order else (
            "highest" if preferred.kind is RendererKind.AMBI_MM else None),
        subset="all",
    )


def select_renderer(obj: AudioObject, layout: SpeakerLayout,
                    nearest_device: str | None,
                    selection_rules=None, namespace=None,
                    sample_rate: int = 48000) -> RendererAssignment:
    """First workable row of the selection table wins; AP1 backstops."""
    rules = list(selection_rules or default_selection_rules())
    preferred = _preferred_rule(obj)
    if preferred is not None:
        rules.insert(0, preferred)
    ns = dict(namespace or {})
    ns.update(object_namespace(obj))
    for rule in rules:
        if not rule.match.holds(ns):
            continue
        candidate = _candidate(rule, layout, obj, nearest_device, sample_rate)
        if _try_build(candidate, layout, obj, sample_rate):
            return candidate
    fallback = RendererAssignment(
        object_id=obj.object_id,
        renderer=RendererClass(RendererKind.AP1_NEAREST),
        speaker_subset=tuple(layout.ids()),
        params=(("subset_kind", "all"),),
    )
    return fallback


def schedule_crossfade(old: RendererAssignment, new: RendererAssignment,
                       start_s: float, duration_s: float) -> CrossfadeSchedule:
    if old.object_id != new.object_id:
        raise ValueError("crossfades connect assignments of one object")
    if old == new:
        raise SameRenderer(
            f"object {old.object_id}: old and new assignments are identical")
    if duration_s <= 0.0:
        raise NonPositiveDuration(f"crossfade duration must be > 0, got {duration_s}")
    if start_s < 0.0:
        raise NonPositiveDuration(f"crossfade start must be >= 0, got {start_s}")
    return CrossfadeSchedule(object_id=old.object_id, old=old, new=new,
                             start_s=float(start_s), duration_s=float(duration_s))


def route(scene: Scene, scenario: ReproductionScenario, ctx: ContextualInfo,
          selection_rules=None, previous=None, now_s: float = 0.0,
          crossfade_s: float = DEFAULT_CROSSFADE_S):
    """Assign one renderer per object; emit crossfade schedules on changes.

    previous maps object_id -> RendererAssignment from the last routing pass.
    Returns (assignments ordered by object_id, schedules).
    """
    previous = previous or {}
    shared_ns = context_namespace(ctx, scene)
    assignments = []
    schedules = []
    for obj in sorted(scene.objects, key=lambda o: o.object_id):
        obj_ctx = ctx.per_object.get(obj.object_id)
        nearest = obj_ctx.nearest_device if obj_ctx else None
        assignment = select_renderer(
            obj, scenario.layout, nearest, selection_rules,
            namespace=shared_ns, sample_rate=scene.sample_rate)
        assignments.append(assignment)
        old = previous.get(obj.object_id)
        if old is not None and old != assignment:
            schedules.append(schedule_crossfade(old, assignment, now_s, crossfade_s))
    return assignments, schedules
