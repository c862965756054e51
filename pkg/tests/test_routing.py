"""Object router tests: feasibility, selection table, subsets, crossfades."""

import numpy as np
import pytest

from obar.context import (
    ContextTracker,
    EnvironmentInfo,
    ListenerInfo,
    SpeakerLayout,
    _parse_speaker,
    build_scenario,
)
from obar.errors import NonPositiveDuration, SameRenderer
from obar.geometry import Direction3
from obar.renderclass import RendererClass, RendererKind
from obar.routing import (
    CrossfadeSchedule,
    RendererAssignment,
    band_capable_subset,
    build_drive,
    feasible_renderers,
    infeasibility_reasons,
    max_ambi_order,
    route,
    schedule_crossfade,
    select_renderer,
    wfs_segment,
)
from obar.rules import parse_selection_rules
from obar.scene import (
    AdvancedMetadata,
    AudioObject,
    ObjectType,
    Scene,
    SceneTargets,
    Stem,
    parse_scene,
)

from conftest import FS, music_like, noise_like, ring_speakers, speech_like


def make_layout(docs):
    return SpeakerLayout(tuple(
        _parse_speaker(d, f"s[{i}]") for i, d in enumerate(docs)))


def line_array(count, spacing_m, y_offset=2.0, prefix="w"):
    """Speakers along a line in front of the listener, spacing in meters."""
    docs = []
    half = (count - 1) / 2.0
    for i in range(count):
        x = y_offset
        y = (i - half) * spacing_m
        az = np.degrees(np.arctan2(y, x))
        dist = float(np.hypot(x, y))
        docs.append({"id": f"{prefix}{i}",
                     "position": {"az": float(az), "el": 0.0, "dist": dist}})
    return docs


def make_object(oid="obj", otype=ObjectType.EFFECT, az=0.0, dist=None,
                samples=None, **over):
    stem = Stem(ref=f"{oid}.wav", sample_rate=FS,
                samples=samples if samples is not None else music_like(0.25))
    position = over.pop("position", Direction3(az, 0.0, dist))
    return AudioObject(object_id=oid, object_type=otype, stems=(stem,),
                       position=position, **over)


def kinds(renderer_set):
    return {r.kind for r in renderer_set}


class TestFeasibility:
    def test_stereo_pair(self):
        layout = make_layout([
            {"id": "l", "position": {"az": 45.0, "el": 0.0, "dist": 2.0}},
            {"id": "r", "position": {"az": -45.0, "el": 0.0, "dist": 2.0}},
        ])
        found = feasible_renderers(layout, make_object(az=10.0))
        assert kinds(found) == {RendererKind.AP1_NEAREST, RendererKind.AP3_VBAP,
                                RendererKind.DIFFUSE}

    def test_single_speaker_with_distant_source(self):
        layout = make_layout(ring_speakers(1))
        found = feasible_renderers(layout, make_object(az=0.0, dist=5.0))
        assert kinds(found) == {RendererKind.AP1_NEAREST,
                                RendererKind.PM_SINGLE_ZONE}

    def test_eight_ring_carries_orders_one_to_three(self):
        layout = make_layout(ring_speakers(8))
        found = feasible_renderers(layout, make_object(az=10.0))
        orders = {r.order for r in found if r.kind is RendererKind.AMBI_MM}
        assert orders == {1, 2, 3}
        assert max_ambi_order(8) == 3

    def test_object_without_position_cannot_pan(self):
        layout = make_layout(ring_speakers(5))
        found = feasible_renderers(layout, make_object(position=None))
        assert RendererKind.AP3_VBAP not in kinds(found)
        assert RendererKind.PM_SINGLE_ZONE not in kinds(found)
        assert RendererKind.AP1_NEAREST in kinds(found)

    def test_wide_ring_has_no_wfs_segment(self):
        assert wfs_segment(make_layout(ring_speakers(5, radius=2.0))) is None

    def test_dense_line_supports_wfs(self):
        layout = make_layout(line_array(6, 0.3))
        segment = wfs_segment(layout)
        assert segment is not None and len(segment) == 6
        found = feasible_renderers(layout, make_object(az=0.0, dist=6.0))
        assert RendererKind.WFS_GAIN_DELAY in kinds(found)

    def test_dense_ring_wraps_around(self):
        layout = make_layout(ring_speakers(16, radius=1.0))
        segment = wfs_segment(layout)
        assert segment is not None and len(segment) == 16

    def test_broken_line_keeps_longest_run(self):
        docs = line_array(4, 0.3, prefix="a") + line_array(5, 0.3, y_offset=-3.0, prefix="b")
        layout = make_layout(docs)
        segment = wfs_segment(layout)
        assert segment is not None
        assert len(segment) == 5
        assert all(sid.startswith("b") for sid in segment)

    def test_reasons_for_missing_renderers(self):
        layout = make_layout(ring_speakers(2))
        reasons = infeasibility_reasons(layout, make_object(az=0.0))
        assert "AmbiMM" in reasons
        assert "WFS" in reasons
        assert "PM" in reasons


class TestBandCapability:
    def _speakers(self):
        return make_layout([
            {"id": "full", "position": {"az": 0.0, "el": 0.0, "dist": 2.0},
             "bandwidth_hz": {"low": 40.0, "high": 20000.0}},
            {"id": "phone", "position": {"az": 30.0, "el": 0.0, "dist": 1.0},
             "bandwidth_hz": {"low": 300.0, "high": 8000.0}},
        ]).speakers

    def test_bassy_stem_drops_narrow_speakers(self):
        bass = noise_like(0.25, seed=9, lo=60.0, hi=200.0)
        kept = band_capable_subset(self._speakers(), make_object(samples=bass), FS)
        assert [s.speaker_id for s in kept] == ["full"]

    def test_bright_stem_keeps_everyone(self):
        bright = noise_like(0.25, seed=9, lo=1000.0, hi=6000.0)
        kept = band_capable_subset(self._speakers(), make_object(samples=bright), FS)
        assert [s.speaker_id for s in kept] == ["full", "phone"]

    def test_emptied_subset_is_restored(self):
        speakers = [s for s in self._speakers() if s.speaker_id == "phone"]
        bass = noise_like(0.25, seed=9, lo=60.0, hi=200.0)
        kept = band_capable_subset(speakers, make_object(samples=bass), FS)
        assert [s.speaker_id for s in kept] == ["phone"]


class TestSelection:
    def _ring(self, count=5):
        return make_layout(ring_speakers(count))

    def test_offscreen_dialogue_goes_to_nearest_device(self):
        layout = self._ring()
        narrator = make_object("narrator", ObjectType.DIALOGUE, az=0.0,
                               samples=speech_like(0.25))
        assignment = select_renderer(narrator, layout, nearest_device="s1")
        assert assignment.renderer.kind is RendererKind.AP1_NEAREST
        assert assignment.speaker_subset == ("s1",)
        assert assignment.param("subset_kind") == "nearest_device"

    def test_onscreen_dialogue_pans(self):
        layout = self._ring()
        actor = make_object("actor", ObjectType.DIALOGUE, az=20.0,
                            samples=speech_like(0.25),
                            advanced=AdvancedMetadata(onscreen=True))
        assignment = select_renderer(actor, layout, nearest_device="s0")
        assert assignment.renderer.kind is RendererKind.AP3_VBAP

    def test_two_dialogue_objects_diverge(self):
        layout = self._ring()
        narrator = make_object("narrator", ObjectType.DIALOGUE, az=0.0,
                               samples=speech_like(0.25))
        actor = make_object("actor", ObjectType.DIALOGUE, az=20.0,
                            samples=speech_like(0.25),
                            advanced=AdvancedMetadata(onscreen=True))
        a = select_renderer(narrator, layout, "s0").renderer
        b = select_renderer(actor, layout, "s0").renderer
        assert a.kind is not b.kind

    def test_ambience_takes_highest_feasible_order(self):
        layout = self._ring(8)
        bed = make_object("bed", ObjectType.AMBIENCE, az=180.0)
        assignment = select_renderer(bed, layout, "s0")
        assert assignment.renderer.kind is RendererKind.AMBI_MM
        # backdrop (|az| > 90) on an 8-ring leaves 3 speakers: order 1
        assert assignment.param("subset_kind") == "backdrop"
        assert assignment.renderer.order == 1

    def test_ambience_backdrop_falls_back_to_full_ring(self):
        layout = self._ring(5)   # backdrop has only 2 speakers
        bed = make_object("bed", ObjectType.AMBIENCE, az=180.0)
        assignment = select_renderer(bed, layout, "s0")
        assert assignment.renderer.kind is RendererKind.AMBI_MM
        assert assignment.param("subset_kind") == "all"
        assert assignment.renderer.order == 2

    def test_diffuse_type_decorrelates(self):
        assignment = select_renderer(
            make_object("wash", ObjectType.DIFFUSE, position=None),
            self._ring(), "s0")
        assert assignment.renderer.kind is RendererKind.DIFFUSE

    def test_high_diffuseness_decorrelates_any_type(self):
        assignment = select_renderer(
            make_object("pad", ObjectType.EFFECT, az=10.0, diffuseness=0.8),
            self._ring(), "s0")
        assert assignment.renderer.kind is RendererKind.DIFFUSE

    def test_positioned_effect_without_distance_pans(self):
        assignment = select_renderer(
            make_object("thud", ObjectType.EFFECT, az=-40.0), self._ring(), "s0")
        assert assignment.renderer.kind is RendererKind.AP3_VBAP

    def test_distant_effect_uses_wfs_on_dense_array(self):
        layout = make_layout(line_array(6, 0.3))
        hit = make_object("hit", ObjectType.EFFECT, az=0.0, dist=6.0)
        assignment = select_renderer(hit, layout, "w0")
        assert assignment.renderer.kind is RendererKind.WFS_GAIN_DELAY
        assert len(assignment.speaker_subset) == 6

    def test_music_with_distance_pressure_matches(self):
        score = make_object("score", ObjectType.MUSIC, az=15.0, dist=4.0)
        assignment = select_renderer(score, self._ring(), "s0")
        assert assignment.renderer.kind is RendererKind.PM_SINGLE_ZONE
        assert assignment.param("beta") == pytest.approx(1e-3)

    def test_music_without_position_mode_matches(self):
        score = make_object("score", ObjectType.MUSIC, position=None)
        assignment = select_renderer(score, self._ring(), "s0")
        assert assignment.renderer.kind is RendererKind.AMBI_MM

    def test_distant_music_still_pressure_matches(self):
        """Bulk path delay is carried by the delay line, not the filter, so
        far sources keep their assignment."""
        score = make_object("score", ObjectType.MUSIC, az=0.0, dist=30.0)
        assignment = select_renderer(score, self._ring(), "s0")
        assert assignment.renderer.kind is RendererKind.PM_SINGLE_ZONE

    def test_preferred_renderer_wins_when_feasible(self):
        score = make_object("score", ObjectType.MUSIC, az=15.0, dist=4.0,
                            advanced=AdvancedMetadata(preferred_renderer="Diffuse"))
        assignment = select_renderer(score, self._ring(), "s0")
        assert assignment.renderer.kind is RendererKind.DIFFUSE

    def test_infeasible_preference_falls_through(self):
        score = make_object("score", ObjectType.MUSIC, az=15.0, dist=4.0,
                            advanced=AdvancedMetadata(preferred_renderer="WFS"))
        assignment = select_renderer(score, self._ring(), "s0")
        assert assignment.renderer.kind is RendererKind.PM_SINGLE_ZONE

    def test_assignments_respect_feasibility(self):
        """Cross-check: selected renderer always sits in the feasible set."""
        layouts = [self._ring(2), self._ring(5), make_layout(line_array(6, 0.3))]
        objects = [
            make_object("a", ObjectType.DIALOGUE, az=0.0, samples=speech_like(0.25)),
            make_object("b", ObjectType.MUSIC, az=10.0, dist=4.0),
            make_object("c", ObjectType.AMBIENCE, az=170.0),
            make_object("d", ObjectType.EFFECT, az=0.0, dist=3.0),
            make_object("e", ObjectType.DIFFUSE, position=None),
        ]
        for layout in layouts:
            for obj in objects:
                assignment = select_renderer(obj, layout, layout.ids()[0])
                feasible = feasible_renderers(layout, obj)
                stripped = RendererClass(assignment.renderer.kind,
                                         assignment.renderer.order)
                assert stripped in feasible, (assignment, layout.ids())

    def test_custom_table(self):
        table = parse_selection_rules({
            "schema": "selection v1",
            "rules": [{"match": "true", "renderer": "Diffuse"},
                      {"match": "true", "renderer": "AP1"}],
        })
        assignment = select_renderer(
            make_object("x", ObjectType.MUSIC, az=0.0), self._ring(), "s0",
            selection_rules=table)
        assert assignment.renderer.kind is RendererKind.DIFFUSE


class TestDriveBuilding:
    def test_ap1_one_hot(self):
        layout = make_layout(ring_speakers(4))
        assignment = RendererAssignment(
            "o", RendererClass(RendererKind.AP1_NEAREST), layout.ids())
        drive = build_drive(assignment, layout, make_object(az=85.0), FS)
        assert drive.gains.tolist() == [0.0, 1.0, 0.0, 0.0]
        assert np.all(drive.delays_s == 0.0)

    def test_ambi_gains_power_normalized(self):
        layout = make_layout(ring_speakers(5))
        assignment = RendererAssignment(
            "o", RendererClass(RendererKind.AMBI_MM, 2), layout.ids())
        drive = build_drive(assignment, layout, make_object(az=33.0), FS)
        assert float(np.sum(drive.gains**2)) == pytest.approx(1.0, abs=1e-9)

    def test_wfs_delays_offset_to_zero(self):
        layout = make_layout(line_array(6, 0.3))
        assignment = RendererAssignment(
            "o", RendererClass(RendererKind.WFS_GAIN_DELAY), layout.ids())
        drive = build_drive(assignment, layout, make_object(az=0.0, dist=6.0), FS)
        assert drive.delays_s.min() == 0.0
        assert float(np.sum(drive.gains**2)) == pytest.approx(1.0, abs=1e-12)

    def test_pm_drive_reproduces_zone_pressure(self):
        """The calibrated filters rebuild the target wave over the control
        zone: per-frequency mismatch stays under 20% through the mid band."""
        layout = make_layout(ring_speakers(5))
        assignment = RendererAssignment(
            "o", RendererClass(RendererKind.PM_SINGLE_ZONE), layout.ids(),
            params=(("beta", 1e-3),))
        source = Direction3(0.0, 0.0, 4.0)
        drive = build_drive(assignment, layout, make_object(position=source), FS)
        assert len(drive.firs) == 5
        assert all(np.all(np.isfinite(f)) for f in drive.firs)
        assert np.all(np.asarray(drive.delays_s) >= 0.0)

        from obar.routing import pm_control_points
        spk = np.array([layout.by_id(s).position.cartesian()
                        for s in assignment.speaker_subset])
        ctl = np.array([p.cartesian() for p in pm_control_points()])
        src = np.array(source.cartesian())
        d_spk = np.linalg.norm(ctl[:, None, :] - spk[None, :, :], axis=2)
        d_src = np.linalg.norm(ctl - src[None, :], axis=1)
        taps = np.array(drive.firs)
        spectra = np.fft.rfft(taps, axis=1)
        grid = np.fft.rfftfreq(taps.shape[1], 1.0 / FS)
        delays = np.asarray(drive.delays_s)
        for f_hz in (250.0, 500.0, 1000.0, 2000.0):
            fi = int(np.argmin(np.abs(grid - f_hz)))
            g = np.exp(-2j * np.pi * grid[fi] * d_spk / 343.0) / (4 * np.pi * d_spk)
            target = (np.exp(-2j * np.pi * grid[fi] * d_src / 343.0)
                      / (4 * np.pi * d_src)) * 4.0 * np.pi * 4.0
            # each lane is FIR then delay line; fold both into one transfer
            lane = spectra[:, fi] * np.exp(-2j * np.pi * grid[fi] * delays)
            achieved = g @ lane
            # remove the FIR centre-tap linear phase before comparing
            achieved *= np.exp(2j * np.pi * grid[fi] * (taps.shape[1] // 2) / FS)
            err = np.linalg.norm(achieved - target) / np.linalg.norm(target)
            assert err < 0.2, (f_hz, err)


class TestCrossfadesAndRouting:
    def _assignment(self, kind, subset=("s0",), order=None, oid="o"):
        return RendererAssignment(oid, RendererClass(kind, order), subset)

    def test_schedule(self):
        old = self._assignment(RendererKind.AP3_VBAP)
        new = self._assignment(RendererKind.AMBI_MM, order=1)
        sched = schedule_crossfade(old, new, 5.0, 1.0)
        assert sched.start_s == 5.0 and sched.duration_s == 1.0

    def test_identical_assignments_rejected(self):
        a = self._assignment(RendererKind.AP3_VBAP)
        with pytest.raises(SameRenderer):
            schedule_crossfade(a, a, 0.0, 1.0)

    def test_non_positive_duration_rejected(self):
        old = self._assignment(RendererKind.AP3_VBAP)
        new = self._assignment(RendererKind.AMBI_MM, order=1)
        with pytest.raises(NonPositiveDuration):
            schedule_crossfade(old, new, 0.0, 0.0)

    def _demo(self, basic_scene_dir):
        scene = parse_scene(basic_scene_dir[1])
        layout = make_layout(ring_speakers(5))
        listener = ListenerInfo(
            listener_id="l", position=Direction3(0, 0, 0), language=None,
            hearing_impaired=False, intelligibility_preference=0.0,
            envelopment_preference=0.0, team_preference=None)
        scenario = build_scenario(layout, [listener], EnvironmentInfo())
        ctx = ContextTracker().update(scenario, scene)
        return scene, scenario, ctx

    def test_route_assigns_every_object(self, basic_scene_dir):
        scene, scenario, ctx = self._demo(basic_scene_dir)
        assignments, schedules = route(scene, scenario, ctx)
        assert [a.object_id for a in assignments] == ["band", "narrator"]
        assert schedules == []
        classes = {a.renderer.kind for a in assignments}
        assert len(classes) >= 2

    def test_route_is_idempotent(self, basic_scene_dir):
        scene, scenario, ctx = self._demo(basic_scene_dir)
        first, _ = route(scene, scenario, ctx)
        previous = {a.object_id: a for a in first}
        second, schedules = route(scene, scenario, ctx, previous=previous)
        assert second == first
        assert schedules == []

    def test_route_emits_crossfade_on_change(self, basic_scene_dir):
        scene, scenario, ctx = self._demo(basic_scene_dir)
        first, _ = route(scene, scenario, ctx)
        previous = {a.object_id: a for a in first}
        everything_diffuse = parse_selection_rules({
            "schema": "selection v1",
            "rules": [{"match": "true", "renderer": "Diffuse"},
                      {"match": "true", "renderer": "AP1"}],
        })
        second, schedules = route(scene, scenario, ctx,
                                  selection_rules=everything_diffuse,
                                  previous=previous, now_s=6.0)
        changed = [a for a, b in zip(sorted(first, key=lambda x: x.object_id),
                                     sorted(second, key=lambda x: x.object_id))
                   if a != b]
        assert len(schedules) == len(changed) > 0
        for sched in schedules:
            assert sched.start_s == 6.0
            assert sched.duration_s == 1.0
