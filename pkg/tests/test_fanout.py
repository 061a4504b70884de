import numpy as np
import pytest

from vidcap.backends import BackendDescriptor, MockTransport, RetryPolicy, make_client
from vidcap.fanout import (
    DUMMY_PROMPT,
    PromptTemplate,
    TeacherSpec,
    build_prompt,
    clip_rng,
    fanout,
    sample_image_frame,
)
from vidcap.ingest import Scene, generate_fixture, open_source, solid
from vidcap.model import ClipRecord, SourceVideo, Subtitle


def make_clip(start=0, end=30, fps=10.0):
    return ClipRecord(source_id="src", start_frame=start, end_frame=end, fps=fps,
                      state="kept")


def make_meta(**overrides):
    base = dict(id="src", frame_count=100, fps=10.0, title="cactus care",
                description="repotting a cactus",
                subtitles=(Subtitle(0.0, 2.0, "first we water it"),
                           Subtitle(2.5, 6.0, "then we wait")))
    base.update(overrides)
    return SourceVideo(**base)


class TestSampleImageFrame:
    def test_bounds_for_n_100(self):
        c = ClipRecord(source_id="s", start_frame=0, end_frame=100, fps=10.0)
        rng = clip_rng(c.clip_id, "image-frame")
        draws = [sample_image_frame(c, rng) for _ in range(500)]
        assert min(draws) >= 30
        assert max(draws) <= 70

    def test_seeded_reproducibility(self):
        c = ClipRecord(source_id="s", start_frame=0, end_frame=100, fps=10.0)
        a = sample_image_frame(c, clip_rng(c.clip_id))
        b = sample_image_frame(c, clip_rng(c.clip_id))
        assert a == b

    def test_degenerate_single_frame_clip(self):
        c = ClipRecord(source_id="s", start_frame=10, end_frame=11, fps=10.0)
        assert sample_image_frame(c, clip_rng(c.clip_id)) == 0

    def test_inclusive_endpoints_reachable(self):
        c = ClipRecord(source_id="s", start_frame=0, end_frame=10, fps=10.0)
        rng = clip_rng(c.clip_id)
        draws = {sample_image_frame(c, rng) for _ in range(2000)}
        assert draws == set(range(3, 8))  # floor(0.3*10)=3 .. floor(0.7*10)=7


class TestBuildPrompt:
    def test_vision_only_is_exactly_the_plain_instruction(self):
        result = build_prompt(make_meta(), make_clip(), False, False)
        assert result.text == DUMMY_PROMPT
        assert result.inputs_used == frozenset({"vision"})
        assert result.downgraded == ()

    def test_dummy_prompt_golden(self):
        assert DUMMY_PROMPT == (
            "Please faithfully summarize the video (or image) in one sentence."
        )

    def test_all_sections_in_fixed_order(self):
        result = build_prompt(make_meta(), make_clip(), True, True)
        text = result.text
        assert text.index("Video title: cactus care") < text.index(
            "Video subtitles:") < text.index(DUMMY_PROMPT)
        assert "repotting a cactus" in text
        assert result.inputs_used == frozenset({"vision", "subtitles", "metadata"})

    def test_golden_full_template(self):
        got = build_prompt(make_meta(), make_clip(), True, True).text
        assert got == (
            "Video title: cactus care\n"
            "Video description: repotting a cactus\n"
            "Video subtitles: first we water it then we wait\n"
            "Please faithfully summarize the video (or image) in one sentence."
        )

    def test_missing_subtitles_downgrades(self):
        meta = make_meta(subtitles=())
        result = build_prompt(meta, make_clip(), True, True)
        assert "Video subtitles" not in result.text
        assert "Video title" in result.text
        assert result.downgraded == ("subtitles",)
        assert result.inputs_used == frozenset({"vision", "metadata"})

    def test_missing_everything_falls_back_to_plain_instruction(self):
        meta = make_meta(title=None, description=None, subtitles=())
        result = build_prompt(meta, make_clip(), True, True)
        assert result.text == DUMMY_PROMPT
        assert set(result.downgraded) == {"metadata", "subtitles"}

    def test_subtitles_filtered_to_clip_window(self):
        # Clip covers 4 s..8 s; only the second subtitle overlaps.
        result = build_prompt(make_meta(), make_clip(start=40, end=80), True, False)
        assert "then we wait" in result.text
        assert "first we water it" not in result.text

    def test_subtitles_concatenated_in_start_order(self):
        meta = make_meta(subtitles=(Subtitle(2.5, 6.0, "second"),
                                    Subtitle(0.0, 2.0, "first")))
        result = build_prompt(meta, make_clip(), True, False)
        assert "first second" in result.text

    def test_template_parse_rejects_unknown_section(self):
        with pytest.raises(ValueError):
            PromptTemplate.parse("[bogus]\nx\n[instruction]\ny\n")


def roster_of(n=8, kind="video", **flags):
    return [TeacherSpec(teacher_id=f"t{i}", backend_id=f"b{i}", kind=kind, **flags)
            for i in range(n)]


def caption_backends(roster, fail_ids=()):
    backends = {}
    for i, spec in enumerate(roster):
        transport = MockTransport(f"echo?salt={i}")
        if spec.backend_id in fail_ids:
            transport.fail_next = 99
        backends[spec.backend_id] = make_client(
            BackendDescriptor(backend_id=spec.backend_id, role="caption",
                              endpoint=f"mock:echo?salt={i}",
                              retry=RetryPolicy(2, 0.0)),
            transport=transport,
        )
    return backends


@pytest.fixture
def source(tmp_path):
    path = tmp_path / "src.vrf"
    generate_fixture([Scene(4.0, solid((40, 40, 220)))], path, fps=10)
    return open_source(path)


class TestFanout:
    def test_eight_teachers_in_roster_order(self, source):
        roster = roster_of(8)
        clip = ClipRecord(source_id=source.source_id, start_frame=0, end_frame=30,
                          fps=10.0)
        result = fanout(clip, make_meta(id=source.source_id), source, roster,
                        caption_backends(roster))
        assert [c.teacher_id for c in result.candidates] == [s.teacher_id for s in roster]
        assert len(set(c.teacher_id for c in result.candidates)) == 8
        assert not result.parked

    def test_partial_failure_records_teacher(self, source):
        roster = roster_of(8)
        clip = ClipRecord(source_id=source.source_id, start_frame=0, end_frame=30,
                          fps=10.0)
        result = fanout(clip, make_meta(id=source.source_id), source, roster,
                        caption_backends(roster, fail_ids={"b3"}))
        assert len(result.candidates) == 7
        assert [f.teacher_id for f in result.failures] == ["t3"]
        assert not result.parked

    def test_all_failed_parks_clip(self, source):
        roster = roster_of(2)
        clip = ClipRecord(source_id=source.source_id, start_frame=0, end_frame=30,
                          fps=10.0)
        result = fanout(clip, make_meta(id=source.source_id), source, roster,
                        caption_backends(roster, fail_ids={"b0", "b1"}))
        assert result.parked
        assert len(result.failures) == 2

    def test_teacher_without_subtitles_downgrades_inputs(self, source):
        roster = [TeacherSpec(teacher_id="vsm", backend_id="b0", kind="video",
                              use_subtitles=True, use_metadata=True)]
        clip = ClipRecord(source_id=source.source_id, start_frame=0, end_frame=30,
                          fps=10.0)
        meta = make_meta(id=source.source_id, subtitles=())
        result = fanout(clip, meta, source, roster, caption_backends(roster))
        assert result.candidates[0].inputs_used == frozenset({"vision", "metadata"})

    def test_deterministic_output(self, source):
        roster = roster_of(8)
        clip = ClipRecord(source_id=source.source_id, start_frame=0, end_frame=30,
                          fps=10.0)
        meta = make_meta(id=source.source_id)
        a = fanout(clip, meta, source, roster, caption_backends(roster))
        b = fanout(clip, meta, source, roster, caption_backends(roster))
        assert [(c.teacher_id, c.text, sorted(c.inputs_used)) for c in a.candidates] == \
               [(c.teacher_id, c.text, sorted(c.inputs_used)) for c in b.candidates]

    def test_image_teacher_sees_one_sampled_frame(self, source):
        seen = {}

        class Spy:
            backend_id = "b0"

            def caption_clip(self, clip_id, frames, prompt, inputs_used):
                seen["frames"] = frames
                from vidcap.model import CaptionCandidate
                return CaptionCandidate(clip_id=clip_id, teacher_id="b0", text="x",
                                        inputs_used=inputs_used)

        roster = [TeacherSpec(teacher_id="img", backend_id="b0", kind="image")]
        clip = ClipRecord(source_id=source.source_id, start_frame=0, end_frame=30,
                          fps=10.0)
        fanout(clip, make_meta(id=source.source_id), source, roster, {"b0": Spy()})
        assert len(seen["frames"]) == 1
        rel = seen["frames"][0].frame_index - clip.start_frame
        assert 9 <= rel <= 21  # floor(0.3*30)=9 .. floor(0.7*30)=21

    def test_video_teacher_sees_per_second_keyframes(self, source):
        seen = {}

        class Spy:
            backend_id = "b0"

            def caption_clip(self, clip_id, frames, prompt, inputs_used):
                seen["frames"] = frames
                from vidcap.model import CaptionCandidate
                return CaptionCandidate(clip_id=clip_id, teacher_id="b0", text="x",
                                        inputs_used=inputs_used)

        roster = [TeacherSpec(teacher_id="vid", backend_id="b0", kind="video")]
        clip = ClipRecord(source_id=source.source_id, start_frame=0, end_frame=30,
                          fps=10.0)
        fanout(clip, make_meta(id=source.source_id), source, roster, {"b0": Spy()})
        assert [f.frame_index for f in seen["frames"]] == [0, 10, 20]

    def test_empty_roster_rejected(self, source):
        clip = ClipRecord(source_id=source.source_id, start_frame=0, end_frame=30,
                          fps=10.0)
        with pytest.raises(ValueError):
            fanout(clip, make_meta(), source, [], {})
