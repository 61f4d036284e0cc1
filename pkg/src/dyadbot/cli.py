"""Command-line entry points.

Subcommands: ``run`` (live gateway service), ``simulate`` (scripted
end-to-end session under mocks), ``replay`` (re-drive a recorded log and
check determinism), ``bench`` (turn-latency benchmark), ``validate``
(fixture integrity checks). All commands are non-interactive and exit-code
clean: 0 success, 1 operational failure, 2 bad usage or broken config.
"""

from __future__ import annotations

import argparse
import asyncio
import hashlib
import json
import signal
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import behavior, intervention
from .backends import BackendSet, DelayedAsr, ScriptedAsr, ScriptedLlm, SilenceTts
from .core import StrategyKind, validate_event_log
from .engine import Engine
from .gateway import GatewayServer
from .pipeline import ConversationHistory, TurnExecutor
from .session import JsonlEventLog, LogParseError, SessionConfig, read_event_log
from .simulate import (
    ScriptError,
    load_dyad_script,
    mask_timestamps,
    replay_events,
    run_simulation,
)
from .vad import SAMPLE_RATE, SpeechSegment

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _fixture_path(name: str):
    return resources.files("dyadbot").joinpath("fixtures", name)


def _load_config(path: str | None) -> SessionConfig:
    if path is None:
        return SessionConfig()
    return SessionConfig.load(path)


def _check_prompts() -> list[str]:
    """Returns a list of problems; empty means every template is intact."""
    problems = []
    for kind in StrategyKind:
        if kind is StrategyKind.STANDBY:
            continue
        p = intervention.prompt_path(kind)
        if not p.is_file():
            problems.append(f"missing prompt fixture: prompts/{kind.value}.txt")
            continue
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        if digest != intervention.PROMPT_SHA256[kind]:
            problems.append(f"prompt checksum mismatch: prompts/{kind.value}.txt")
    return problems


# ------------------------------------------------------------------ run


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _load_config(args.config)
    except (OSError, ValueError) as e:
        print(f"bad config: {e}", file=sys.stderr)
        return EXIT_USAGE
    problems = _check_prompts()
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_USAGE
    if args.check:
        print("config ok")
        return EXIT_OK

    session_id = time.strftime("%Y%m%d-%H%M%S")
    out_dir = Path(args.out or "sessions") / session_id
    out_dir.mkdir(parents=True, exist_ok=True)
    config.save(str(out_dir / "config.json"))
    log = JsonlEventLog(str(out_dir / "events.jsonl"))

    async def serve() -> int:
        engine = Engine(config, sink=log)
        server = GatewayServer(engine, host=args.host, port=args.port)
        try:
            await server.start()
        except OSError as e:
            print(f"cannot listen on {args.host}:{args.port}: {e}", file=sys.stderr)
            return EXIT_FAILURE
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        print(f"ready: {server.url} (session {session_id}, log {out_dir / 'events.jsonl'})", flush=True)
        await stop.wait()
        await server.stop()
        return EXIT_OK

    try:
        return asyncio.run(serve())
    finally:
        log.close()
        print(f"session log flushed: {out_dir / 'events.jsonl'}")


# ------------------------------------------------------------- simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        if args.script:
            directives = load_dyad_script(args.script)
        else:
            with resources.as_file(_fixture_path("dyad_basic.jsonl")) as p:
                directives = load_dyad_script(str(p))
        if args.config:
            config = SessionConfig.load(args.config)
        else:
            config = SessionConfig.from_dict(json.loads(_fixture_path("sim_config.json").read_text()))
    except (OSError, ValueError, ScriptError) as e:
        print(f"cannot load simulation inputs: {e}", file=sys.stderr)
        return EXIT_USAGE

    sink = None
    out_dir = None
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        config.save(str(out_dir / "config.json"))
        sink = JsonlEventLog(str(out_dir / "events.jsonl"))
    try:
        report = run_simulation(config, directives, compression=args.compress, sink=sink)
    finally:
        if sink is not None:
            sink.close()
    if out_dir is not None:
        (out_dir / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_json())
    ok = report.metrics["validation"]["ok"] and report.metrics["final_phase"] == "debrief"
    return EXIT_OK if ok else EXIT_FAILURE


# --------------------------------------------------------------- replay


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        events = read_event_log(args.log)
    except LogParseError as e:
        print(f"corrupt log: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        print(f"cannot read log: {e}", file=sys.stderr)
        return EXIT_USAGE
    config_path = args.config or str(Path(args.log).parent / "config.json")
    try:
        config = SessionConfig.load(config_path)
    except (OSError, ValueError) as e:
        print(f"cannot load config {config_path}: {e}", file=sys.stderr)
        return EXIT_USAGE

    sink = None
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        sink = JsonlEventLog(str(Path(args.out) / "events.jsonl"))
    try:
        regenerated = replay_events(events, config, sink=sink)
    finally:
        if sink is not None:
            sink.close()
    original_masked = mask_timestamps(events)
    regen_masked = mask_timestamps(regenerated)
    if original_masked == regen_masked:
        print(f"replay ok: {len(regenerated)} events match (timestamps masked)")
        return EXIT_OK
    for i, (a, b) in enumerate(zip(original_masked, regen_masked)):
        if a != b:
            print(f"replay mismatch at event {i}:\n  original:    {a}\n  regenerated: {b}", file=sys.stderr)
            break
    else:
        print(
            f"replay mismatch: original {len(original_masked)} events, regenerated {len(regen_masked)}",
            file=sys.stderr,
        )
    return EXIT_FAILURE


# ----------------------------------------------------------------- bench


def _bench_segment() -> SpeechSegment:
    t = np.arange(SAMPLE_RATE // 2, dtype=np.float64) / SAMPLE_RATE
    tone = (0.3 * 32767 * np.sin(2 * np.pi * 440 * t)).astype(np.int16)
    return SpeechSegment(start_ms=0, end_ms=500, samples=tone)


def cmd_bench(args: argparse.Namespace) -> int:
    if args.turns <= 0:
        print(json.dumps({"turns": 0, "p50_ms": None, "p95_ms": None, "max_ms": None}))
        return EXIT_OK
    asr = ScriptedAsr(queue=[f"bench utterance {i}" for i in range(args.turns)])
    if args.asr_delay_ms > 0:
        asr = DelayedAsr(asr, args.asr_delay_ms)
    backends = BackendSet(asr=asr, llm=ScriptedLlm(["Take a slow breath. What do you notice?"]), tts=SilenceTts())
    executor = TurnExecutor(backends)
    segment = _bench_segment()
    gaps = []
    for _ in range(args.turns):
        history = ConversationHistory()
        history.begin_episode(1)
        result = executor.run_turn(segment, "bench prompt", history)
        gaps.append(result.latency.response_gap)
    gaps.sort()
    p50 = gaps[int(0.50 * (len(gaps) - 1))]
    p95 = gaps[int(0.95 * (len(gaps) - 1))]
    report = {
        "turns": args.turns,
        "p50_ms": round(p50, 3),
        "p95_ms": round(p95, 3),
        "max_ms": round(gaps[-1], 3),
        "budget_ms": args.budget_ms,
    }
    print(json.dumps(report))
    if p95 > args.budget_ms:
        print(f"p95 {p95:.3f} ms exceeds budget {args.budget_ms} ms", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


# -------------------------------------------------------------- validate


def cmd_validate(args: argparse.Namespace) -> int:
    failures = 0

    def check(name: str, problem: str | None) -> None:
        nonlocal failures
        if problem is None:
            print(f"ok   {name}")
        else:
            failures += 1
            print(f"FAIL {name}: {problem}")

    prompt_problems = _check_prompts()
    if prompt_problems:
        for problem in prompt_problems:
            check("prompt fixtures", problem)
    else:
        check("prompt fixtures", None)

    try:
        for kind in StrategyKind:
            script = behavior.compile_script(kind)
            script.validate()
            rebuilt = behavior.BehaviorScript.from_dict(script.to_dict())
            if rebuilt.to_dict() != script.to_dict():
                raise behavior.ScriptError(f"{kind.value}: JSON round-trip mismatch")
        check("behavior scripts", None)
    except behavior.ScriptError as e:
        check("behavior scripts", str(e))

    try:
        events = [
            _ev for _ev in _read_fixture_events("sample_events.jsonl")
        ]
        result = validate_event_log(events)
        check(
            "bundled sample log",
            None if result.ok else f"violation at {result.violation.index}: {result.violation.reason}",
        )
    except Exception as e:
        check("bundled sample log", str(e))

    try:
        with resources.as_file(_fixture_path("dyad_basic.jsonl")) as p:
            load_dyad_script(str(p))
        SessionConfig.from_dict(json.loads(_fixture_path("sim_config.json").read_text()))
        check("bundled dyad script + config", None)
    except Exception as e:
        check("bundled dyad script + config", str(e))

    return EXIT_OK if failures == 0 else EXIT_FAILURE


def _read_fixture_events(name: str):
    from .core import SessionEvent

    for line in _fixture_path(name).read_text(encoding="utf-8").splitlines():
        if line.strip():
            yield SessionEvent.from_json(line)


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyadbot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="start the live gateway service")
    p_run.add_argument("--config", help="session config JSON")
    p_run.add_argument("--check", action="store_true", help="validate config and exit")
    p_run.add_argument("--host", default="127.0.0.1")
    p_run.add_argument("--port", type=int, default=8765)
    p_run.add_argument("--out", help="directory for session logs (default ./sessions)")
    p_run.set_defaults(func=cmd_run)

    p_sim = sub.add_parser("simulate", help="run a scripted session under mock backends")
    p_sim.add_argument("--script", help="dyad script JSONL (default: bundled basic script)")
    p_sim.add_argument("--config", help="session config JSON (default: bundled sim config)")
    p_sim.add_argument("--compress", type=float, default=0.0,
                       help="time compression factor; 0 = as fast as possible")
    p_sim.add_argument("--out", help="write events.jsonl/config.json/metrics.json here")
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("replay", help="re-drive a recorded log and verify determinism")
    p_rep.add_argument("--log", required=True, help="events.jsonl to replay")
    p_rep.add_argument("--config", help="config JSON (default: config.json next to the log)")
    p_rep.add_argument("--out", help="write the regenerated log here")
    p_rep.set_defaults(func=cmd_replay)

    p_bench = sub.add_parser("bench", help="measure orchestration overhead per turn")
    p_bench.add_argument("--turns", type=int, default=100)
    p_bench.add_argument("--budget-ms", type=float, default=50.0)
    p_bench.add_argument("--asr-delay-ms", type=float, default=0.0,
                         help="inject a fixed ASR delay (instrumentation sanity)")
    p_bench.set_defaults(func=cmd_bench)

    p_val = sub.add_parser("validate", help="check bundled fixtures and scripts")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
