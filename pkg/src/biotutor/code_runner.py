"""Isolated execution of solver-generated code.

Each execution gets a fresh OS process, a fresh temporary working directory,
and a scrubbed environment (PATH and locale only). Whatever the code does is
reported as a value: a crash, a syntax error, or a timeout is a normal
CodeExecution result, never an exception. Only a misconfigured interpreter
raises.
"""

from __future__ import annotations

import os
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass

from .errors import ConfigError, RunnerConfigError

DEFAULT_TIMEOUT_S = 30.0
DEFAULT_MAX_OUTPUT_BYTES = 1 << 20  # 1 MiB per stream
TRUNCATION_MARKER = "[truncated]"

_ENV_KEEP = ("PATH", "LANG", "LC_ALL", "LC_CTYPE")


@dataclass(frozen=True)
class RunnerLimits:
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES
    interpreter_command: tuple[str, ...] = (sys.executable,)

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout_s}")
        if self.max_output_bytes < 16:
            raise ConfigError(f"max_output_bytes too small: {self.max_output_bytes}")
        if not self.interpreter_command:
            raise ConfigError("interpreter_command must name an interpreter")


@dataclass(frozen=True)
class CodeExecution:
    code: str
    stdout: str
    stderr: str
    returncode: int
    duration_s: float
    timed_out: bool

    def to_record(self) -> dict:
        """The wire shape embedded in agent tool messages. Timing is left
        out so scripted runs serialize identically across machines."""
        return {"code": self.code, "stdout": self.stdout, "stderr": self.stderr, "returncode": self.returncode}


def execute(code: str, limits: RunnerLimits = RunnerLimits()) -> CodeExecution:
    """Run ``code`` under the configured interpreter and capture everything.

    The snippet is written to a file inside a throwaway directory, so runs
    never see each other's files. Timed-out processes are killed (whole
    process group) and reported with returncode -1.
    """
    env = {key: os.environ[key] for key in _ENV_KEEP if key in os.environ}
    started = time.perf_counter()

    with tempfile.TemporaryDirectory(prefix="tutor-run-") as workdir:
        script = os.path.join(workdir, "snippet.py")
        with open(script, "w", encoding="utf-8") as fh:
            fh.write(code)

        cmd = [*limits.interpreter_command, script]
        try:
            proc = subprocess.Popen(
                cmd,
                cwd=workdir,
                env=env,
                stdin=subprocess.DEVNULL,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                start_new_session=True,
            )
        except FileNotFoundError as exc:
            raise RunnerConfigError(f"interpreter not found: {limits.interpreter_command[0]}") from exc

        timed_out = False
        try:
            out, err = proc.communicate(timeout=limits.timeout_s)
            returncode = proc.returncode
        except subprocess.TimeoutExpired:
            timed_out = True
            returncode = -1
            _kill_group(proc)
            try:
                out, err = proc.communicate(timeout=5)
            except subprocess.TimeoutExpired:
                out, err = b"", b""

    duration = time.perf_counter() - started
    return CodeExecution(
        code=code,
        stdout=_decode(out, limits.max_output_bytes),
        stderr=_decode(err, limits.max_output_bytes),
        returncode=returncode,
        duration_s=duration,
        timed_out=timed_out,
    )


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def _decode(raw: bytes | None, limit: int) -> str:
    if not raw:
        return ""
    if len(raw) <= limit:
        return raw.decode("utf-8", errors="replace")
    # Cut at the byte limit; errors="ignore" drops a trailing partial
    # codepoint so the prefix stays valid UTF-8.
    return raw[:limit].decode("utf-8", errors="ignore") + TRUNCATION_MARKER
