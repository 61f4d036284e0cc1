import pytest

from dyadbot.behavior import (
    BREATHING_PERIOD_MS,
    BehaviorEngine,
    BehaviorScript,
    CHANNEL_RANGES,
    Channel,
    Keyframe,
    Phase,
    PhaseMode,
    ScriptError,
    SensorEvent,
    SensorKind,
    breathing_phase,
    builtin_scripts,
    compile_script,
    next_command_at,
    start_script,
    tick,
)
from dyadbot.core import StrategyKind


class TestBreathingPhase:
    def test_anchor_points(self):
        assert breathing_phase(0, 6000) == (0.5, 0.5)
        assert breathing_phase(1500, 6000) == (1.0, 1.0)
        head, light = breathing_phase(3000, 6000)
        assert head == pytest.approx(0.5)
        assert light == head

    def test_phase_lock_everywhere(self):
        for t in range(0, 12000, 37):
            head, light = breathing_phase(t, 6000)
            assert head == light  # identical phase argument by construction

    def test_period_must_be_positive(self):
        with pytest.raises(ValueError):
            breathing_phase(100, 0)


def head_pitch_value_at(engine_time):
    """Last head-pitch command emitted up to engine_time in the breathing script."""
    engine = BehaviorEngine()
    commands, _ = engine.start(StrategyKind.BREATHING_EXERCISE.value, 0)
    value = None
    for c in commands:
        if c.channel is Channel.HEAD_PITCH:
            value = c.value
    t = 0
    while t < engine_time:
        t = min(engine_time, t + 100)
        for c in engine.tick(t)[0]:
            if c.channel is Channel.HEAD_PITCH:
                value = c.value
    return value


class TestBuiltinScripts:
    def test_breathing_loop_periodicity(self):
        assert head_pitch_value_at(0) == head_pitch_value_at(BREATHING_PERIOD_MS)

    def test_all_strategies_compile_and_validate(self):
        for kind in StrategyKind:
            script = compile_script(kind)
            script.validate()
            assert script.id == kind.value

    def test_physical_touch_stays_sad_without_touch(self):
        engine = BehaviorEngine()
        engine.start(StrategyKind.PHYSICAL_TOUCH.value, 0)
        engine.tick(10_000)
        assert engine.active_phase == "sad"

    def test_touch_enters_enjoyment_and_resets_clock(self):
        engine = BehaviorEngine()
        engine.start(StrategyKind.PHYSICAL_TOUCH.value, 0)
        engine.tick(3000)
        engine.on_sensor(SensorEvent(SensorKind.TOUCH, ts=3000, region="back"))
        _, entered = engine.tick(3000)
        assert entered == [(StrategyKind.PHYSICAL_TOUCH.value, "enjoyment")]
        assert engine.state.phase_started_ms == 3000

    def test_standby_emits_nothing_after_closing(self):
        engine = BehaviorEngine()
        commands, entered = engine.start(StrategyKind.STANDBY.value, 0)
        assert commands  # the closing sequence itself
        engine.tick(2500)
        assert engine.active_phase is None
        for t in (3000, 10_000, 60_000):
            cmds, _ = engine.tick(t)
            assert cmds == []
        assert engine.next_deadline() is None

    def test_face_detected_aims_head_at_bearing(self):
        engine = BehaviorEngine()
        engine.start(StrategyKind.EMOTION_VALIDATION.value, 0)
        engine.on_sensor(SensorEvent(SensorKind.FACE_FOUND, ts=1000, bearing_deg=30.0))
        commands, entered = engine.tick(1000)
        assert (StrategyKind.EMOTION_VALIDATION.value, "gaze") in entered
        yaw = [c for c in commands if c.channel is Channel.HEAD_YAW]
        assert yaw and yaw[-1].value == pytest.approx(30.0 / 90.0)

    def test_face_lost_returns_to_scan(self):
        engine = BehaviorEngine()
        engine.start(StrategyKind.EMOTION_VALIDATION.value, 0)
        engine.on_sensor(SensorEvent(SensorKind.FACE_FOUND, ts=500, bearing_deg=0.0))
        engine.tick(500)
        engine.on_sensor(SensorEvent(SensorKind.FACE_LOST, ts=900))
        engine.tick(900)
        assert engine.active_phase == "scan"

    def test_flourish_chains_into_standby(self):
        engine = BehaviorEngine()
        engine.start(StrategyKind.POSITIVE_REINFORCEMENT.value, 0, phase="flourish")
        _, entered = engine.tick(3600)
        assert (StrategyKind.STANDBY.value, "doze") in entered


class TestTickSemantics:
    def test_tick_twice_over_same_interval_emits_nothing(self):
        script = compile_script(StrategyKind.BREATHING_EXERCISE)
        state, _ = start_script(script, 0)
        first = tick(script, state, 1000)
        assert first.commands
        second = tick(script, first.state, 1000)
        assert second.commands == ()

    def test_one_sensor_transition_per_tick(self):
        script = compile_script(StrategyKind.EMOTION_VALIDATION)
        state, _ = start_script(script, 0)
        events = (
            SensorEvent(SensorKind.FACE_FOUND, ts=100, bearing_deg=10.0),
            SensorEvent(SensorKind.FACE_LOST, ts=110),
        )
        result = tick(script, state, 200, events)
        assert result.state.phase == "gaze"
        assert len(result.leftover) == 1
        follow = tick(script, result.state, 200, result.leftover)
        assert follow.state.phase == "scan"

    def test_time_cannot_go_backwards(self):
        script = compile_script(StrategyKind.REFOCUS)
        state, _ = start_script(script, 0)
        state = tick(script, state, 500).state
        with pytest.raises(ValueError):
            tick(script, state, 400)

    def test_next_command_at_is_future(self):
        script = compile_script(StrategyKind.BREATHING_EXERCISE)
        state, _ = start_script(script, 0)
        state = tick(script, state, 777).state
        nxt = next_command_at(script, state)
        assert nxt is not None and nxt > 777


class TestInvariants:
    def test_range_safety_under_fuzzed_tick_schedules(self, rng):
        for kind in StrategyKind:
            engine = BehaviorEngine()
            commands, _ = engine.start(kind.value, 0)
            t = 0
            for _ in range(60):
                t += int(rng.randint(1, 700))
                if rng.rand() < 0.2:
                    engine.on_sensor(_random_sensor(rng, t))
                step_cmds, _ = engine.tick(t)
                commands.extend(step_cmds)
            for c in commands:
                lo, hi = CHANNEL_RANGES[c.channel]
                assert lo <= c.value <= hi

    def test_sensor_trace_replay_is_deterministic(self, rng):
        trace = []
        t = 0
        for _ in range(30):
            t += int(rng.randint(1, 900))
            trace.append((t, _random_sensor(rng, t)))

        def run():
            engine = BehaviorEngine()
            out, _ = engine.start(StrategyKind.EMOTION_VALIDATION.value, 0)
            out = list(out)
            for ts, ev in trace:
                engine.on_sensor(ev)
                cmds, _ = engine.tick(ts)
                out.extend(cmds)
            return out

        assert run() == run()

    def test_commands_per_channel_ordered(self):
        engine = BehaviorEngine()
        commands, _ = engine.start(StrategyKind.BREATHING_EXERCISE.value, 0)
        commands = list(commands)
        for t in range(0, 13_000, 400):
            commands.extend(engine.tick(t)[0])
        by_channel = {}
        for c in commands:
            by_channel.setdefault(c.channel, []).append(c.at_ms)
        for times in by_channel.values():
            assert times == sorted(times)


def _random_sensor(rng, t):
    k = rng.randint(0, 3)
    if k == 0:
        return SensorEvent(SensorKind.TOUCH, ts=t, region="back" if rng.rand() < 0.5 else "head")
    if k == 1:
        return SensorEvent(SensorKind.FACE_FOUND, ts=t, bearing_deg=float(rng.uniform(-90, 90)))
    return SensorEvent(SensorKind.FACE_LOST, ts=t)


class TestScriptFormat:
    def test_json_round_trip_all_builtins(self):
        for script in builtin_scripts().values():
            rebuilt = BehaviorScript.from_dict(script.to_dict())
            assert rebuilt.to_dict() == script.to_dict()

    def test_cyclic_chain_rejected_with_phase_names(self):
        bad = {
            "id": "cyclic",
            "initial": "a",
            "phases": {
                "a": {"mode": "end", "duration_ms": 100, "next": "b", "keyframes": []},
                "b": {"mode": "end", "duration_ms": 100, "next": "a", "keyframes": []},
            },
            "transitions": [],
        }
        with pytest.raises(ScriptError, match="a -> b -> a"):
            BehaviorScript.from_dict(bad)

    def test_unreachable_phase_rejected(self):
        bad = {
            "id": "orphan",
            "initial": "a",
            "phases": {
                "a": {"mode": "hold", "keyframes": []},
                "lonely": {"mode": "hold", "keyframes": []},
            },
            "transitions": [],
        }
        with pytest.raises(ScriptError, match="lonely"):
            BehaviorScript.from_dict(bad)

    def test_out_of_range_value_rejected(self):
        with pytest.raises(ScriptError):
            Keyframe(0, Channel.BACK_LIGHT, 1.5)
        with pytest.raises(ScriptError):
            Keyframe(0, Channel.HEAD_PITCH, -0.1)
        Keyframe(0, Channel.HEAD_YAW, -0.9)  # signed channel allows negatives

    def test_loop_needs_period(self):
        with pytest.raises(ScriptError):
            Phase("p", PhaseMode.LOOP, ())

    def test_touch_region_validated(self):
        with pytest.raises(ValueError):
            SensorEvent(SensorKind.TOUCH, ts=0, region="tail")

    def test_bearing_range_validated(self):
        with pytest.raises(ValueError):
            SensorEvent(SensorKind.FACE_FOUND, ts=0, bearing_deg=120.0)
