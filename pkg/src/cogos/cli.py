"""``cogos`` command line: run, console and eval."""

from __future__ import annotations

import argparse
import json
import logging
import queue
import sys
import threading
from pathlib import Path
from typing import IO, TextIO

from .backends import BackendError, ScriptParseError
from .bus import Utterance
from .config import ConfigError, Runtime, build_runtime, load_config
from .evaluation import SuiteError, ablation_deltas, delta_table, load_suite, run_suite
from .orchestrator import OPTIONAL_MODULES, run_task
from .steps import Outcome, Transcript, TranscriptEntry
from .transcripts import TranscriptWriter, entry_to_json

log = logging.getLogger("cogos")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_REFUSED = 4
EXIT_STEP_LIMIT = 5

EXIT_CODES = {
    Outcome.FINISHED: EXIT_OK,
    Outcome.BACKEND_ERROR: EXIT_BACKEND,
    Outcome.REFUSED: EXIT_REFUSED,
    Outcome.STEP_LIMIT: EXIT_STEP_LIMIT,
}
SETUP_ERRORS = (ConfigError, ScriptParseError, ValueError, OSError)


def exit_code(outcome: Outcome | None) -> int:
    return EXIT_CODES.get(outcome, EXIT_BACKEND) if outcome is not None else EXIT_BACKEND


def _load(config_path: str, console_input=None) -> Runtime:
    return build_runtime(load_config(config_path), console_input=console_input)


def _entry_line(robot_id: str, entry: TranscriptEntry) -> str:
    payload = f" -> {entry.result.status.value}" + (f": {entry.result.payload}" if entry.result.payload else "")
    return f"[{robot_id}] {entry.index + 1}. {entry.text}{payload}"


def _run_assignments(runtime: Runtime, tasks: dict[str, str], out: TextIO,
                     on_entry=None) -> dict[str, Transcript]:
    """Run each robot with a task in its own thread; all but ``BackendError`` propagate."""
    lock = threading.Lock()
    transcripts: dict[str, Transcript] = {}
    errors: list[BaseException] = []
    limits = runtime.config.limits

    def worker(robot_id: str, task: str) -> None:
        robot = runtime.robot(robot_id)

        def hook(entry: TranscriptEntry) -> None:
            with lock:
                if on_entry is not None:
                    on_entry(robot_id, task, entry)
                print(_entry_line(robot_id, entry), file=out, flush=True)

        try:
            transcripts[robot_id] = run_task(task, robot.profile, robot.registry, limits, on_entry=hook)
        except BackendError as exc:
            transcripts[robot_id] = exc.transcript  # type: ignore[attr-defined]
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=item, name=f"robot-{item[0]}", daemon=True)
               for item in tasks.items()]
    for t in threads:
        t.start()
    return _join(threads, errors, transcripts, tasks)


def _join(threads, errors, transcripts, tasks):
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    return {rid: transcripts[rid] for rid in tasks}


# -------------------------------------------------------------------- run


def cmd_run(args: argparse.Namespace, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    try:
        runtime = _load(args.config)
        primary = runtime.robot(args.robot) if args.robot else runtime.robots[0]
    except KeyError:
        print(f"error: no robot {args.robot!r} in config", file=err)
        return EXIT_CONFIG
    except SETUP_ERRORS as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    tasks = {r.profile.robot_id: r.task for r in runtime.robots if r.task}
    if args.task:
        tasks[primary.profile.robot_id] = args.task
    if primary.profile.robot_id not in tasks:
        print(f"error: no task for {primary.profile.robot_id}; pass --task", file=err)
        return EXIT_CONFIG

    out_dir = Path(args.output_dir) if args.output_dir else runtime.config.output_dir
    writers = {rid: TranscriptWriter(out_dir / f"{rid}.jsonl", task, rid) for rid, task in tasks.items()}
    try:
        transcripts = _run_assignments(runtime, tasks, out,
                                       on_entry=lambda rid, task, e: writers[rid].write(e))
    except KeyboardInterrupt:
        for w in writers.values():
            w.close(None, "interrupted")
        raise
    for rid, transcript in transcripts.items():
        writers[rid].close(transcript.outcome, transcript.error)
        detail = f" ({transcript.error})" if transcript.error else ""
        print(f"[{rid}] outcome: {transcript.outcome.value}{detail}", file=out)
        print(f"[{rid}] transcript: {writers[rid].path}", file=out)
    return exit_code(transcripts[primary.profile.robot_id].outcome)


# ---------------------------------------------------------------- console


class SessionLog:
    """Append-only JSONL session file: header, entries, utterances, outcomes."""

    def __init__(self, path: Path, header: dict) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.path = path
        self._fh: IO[str] = open(path, "w", encoding="utf-8")
        self._lock = threading.Lock()
        self.write({"record": "header", **header})

    def write(self, obj: dict) -> None:
        with self._lock:
            self._fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()


class ConsoleIO:
    """Reads operator input on the invoking thread on behalf of robot threads."""

    def __init__(self, stdin: TextIO, out: TextIO) -> None:
        self.stdin = stdin
        self.out = out
        self.requests: queue.Queue = queue.Queue()

    def readline(self, prompt: str) -> str | None:
        self.out.write(prompt)
        self.out.flush()
        line = self.stdin.readline()
        return None if line == "" else line.rstrip("\n")

    def ask(self, prompt: str, party: str) -> str | None:
        """Called from robot threads by the bus when a LISTEN finds nothing."""
        reply: queue.Queue = queue.Queue(maxsize=1)
        self.requests.put((prompt, reply))
        return reply.get()

    def serve_until(self, threads: list[threading.Thread]) -> None:
        while any(t.is_alive() for t in threads):
            try:
                prompt, reply = self.requests.get(timeout=0.05)
            except queue.Empty:
                continue
            reply.put(self.readline(prompt))


def cmd_console(args: argparse.Namespace, stdin: TextIO | None = None, out: TextIO | None = None,
                err: TextIO | None = None) -> int:
    stdin, out, err = stdin or sys.stdin, out or sys.stdout, err or sys.stderr
    io = ConsoleIO(stdin, out)
    try:
        runtime = _load(args.config, console_input=io.ask)
    except SETUP_ERRORS as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    out_dir = Path(args.output_dir) if args.output_dir else runtime.config.output_dir
    session = SessionLog(out_dir / "console-session.jsonl", {
        "config": str(runtime.config.path),
        "robots": [r.profile.robot_id for r in runtime.robots],
    })

    def on_utterance(utt: Utterance, recipients: list[str]) -> None:
        session.write({"record": "utterance", "speaker": utt.speaker, "text": utt.text,
                       "location": utt.audible_at, "seq": utt.seq, "recipients": recipients})

    runtime.bus.subscribe(on_utterance)
    last = EXIT_OK
    try:
        while True:
            line = io.readline("task> ")
            if line is None or line.strip() in ("exit", "quit"):
                break
            line = line.strip()
            if not line:
                continue
            target = runtime.robots[0].profile.robot_id
            if line.startswith("@"):
                name, _, line = line[1:].partition(" ")
                target = name
                line = line.strip()
                try:
                    runtime.robot(target)
                except KeyError:
                    print(f"no robot {target!r}", file=out)
                    continue
            tasks = {r.profile.robot_id: r.task for r in runtime.robots if r.task}
            tasks[target] = line
            session.write({"record": "task", "robot_id": target, "task": line})
            transcripts = _console_run(runtime, tasks, io, out, session)
            for rid, t in transcripts.items():
                session.write({"record": "outcome", "robot_id": rid, "task": t.task,
                               "outcome": t.outcome.value, "error": t.error})
                print(f"[{rid}] outcome: {t.outcome.value}", file=out)
            last = exit_code(transcripts[target].outcome)
    except KeyboardInterrupt:
        session.write({"record": "interrupted"})
        print("\ninterrupted; session saved", file=out)
    finally:
        session.close()
    print(f"session: {session.path}", file=out)
    return last


def _console_run(runtime: Runtime, tasks: dict[str, str], io: ConsoleIO, out: TextIO,
                 session: SessionLog) -> dict[str, Transcript]:
    lock = threading.Lock()
    transcripts: dict[str, Transcript] = {}
    errors: list[BaseException] = []

    def worker(robot_id: str, task: str) -> None:
        robot = runtime.robot(robot_id)

        def hook(entry: TranscriptEntry) -> None:
            with lock:
                session.write({"record": "entry", "robot_id": robot_id, "task": task, **entry_to_json(entry)})
                print(_entry_line(robot_id, entry), file=out, flush=True)

        try:
            transcripts[robot_id] = run_task(task, robot.profile, robot.registry, runtime.config.limits,
                                             on_entry=hook)
        except BackendError as exc:
            transcripts[robot_id] = exc.transcript  # type: ignore[attr-defined]
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=item, name=f"robot-{item[0]}", daemon=True)
               for item in tasks.items()]
    for t in threads:
        t.start()
    io.serve_until(threads)
    return _join(threads, errors, transcripts, tasks)


# ------------------------------------------------------------------- eval


def cmd_eval(args: argparse.Namespace, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    try:
        config = load_config(args.config)
        cases = load_suite(args.suite)
    except (ConfigError, SuiteError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    ablate = tuple(args.ablate or ())
    for name in ablate:
        if name not in OPTIONAL_MODULES:
            print(f"error: cannot ablate {name!r}; choose from {', '.join(OPTIONAL_MODULES)}", file=err)
            return EXIT_CONFIG
    suite_name = Path(args.suite).name
    base = run_suite(config, cases, suite_name)
    report = base.to_json()
    print(base.table(), file=out)
    confusion = base.confusion
    if confusion is not None:
        print("", file=out)
        print(confusion.table(), file=out)
    if ablate:
        ablated = run_suite(config, cases, suite_name, ablate)
        rows = ablation_deltas(base, ablated)
        report["ablation"] = {"disabled": list(ablate), "report": ablated.to_json(), "deltas": rows}
        print("", file=out)
        print(delta_table(rows, ablate), file=out)
    path = Path(args.report) if args.report else config.output_dir / f"report-{Path(args.suite).stem}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"report: {path}", file=out)
    return EXIT_OK


# ------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cogos", description="Modular cognitive robot behavior runner.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one task (plus any standing robot tasks)")
    run.add_argument("--config", required=True)
    run.add_argument("--task", help="task for the selected robot; defaults to its standing task")
    run.add_argument("--robot", help="robot id; defaults to the first configured robot")
    run.add_argument("--output-dir", help="transcript directory; overrides the config")
    run.set_defaults(func=cmd_run)

    console = sub.add_parser("console", help="interactive operator session")
    console.add_argument("--config", required=True)
    console.add_argument("--output-dir")
    console.set_defaults(func=cmd_console)

    ev = sub.add_parser("eval", help="run an evaluation suite")
    ev.add_argument("--config", required=True)
    ev.add_argument("--suite", required=True)
    ev.add_argument("--ablate", action="append", metavar="MODULE",
                    help=f"rerun with a module disabled and report deltas ({', '.join(OPTIONAL_MODULES)})")
    ev.add_argument("--report", help="report path; defaults to <output_dir>/report-<suite>.json")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
