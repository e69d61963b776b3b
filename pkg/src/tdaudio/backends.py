"""Interchangeable transcription backends behind one ``transcribe`` call.

kinds:
  toy        the in-repo recognizer, loaded from a model file
  command    an external program; ``{wav}`` in the template is replaced by a
             WAV path and the program prints one UTF-8 line
  http       POST of raw WAV bytes; the reply is JSON with a "text" field
  scripted   a fixed clip-id -> transcript table, for tests and replays
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import tempfile
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .audio_io import AudioClip, wav_bytes, write_wav
from .text_metrics import normalize_text
from .toy_asr.model import ToyAsrModel

BACKEND_KINDS = ("toy", "command", "http", "scripted")


class TranscriptionError(Exception):
    """Any per-clip backend failure; reported as transcription-failed."""

    kind = "transcription-failed"


class BackendLaunchError(TranscriptionError):
    pass


class BackendTimeoutError(TranscriptionError):
    pass


class MalformedResponseError(TranscriptionError):
    pass


class UnknownClipError(TranscriptionError):
    pass


class ModelInputError(TranscriptionError):
    pass


@dataclass(frozen=True)
class AsrBackendSpec:
    kind: str
    model_path: str | None = None
    command: str | None = None
    url: str | None = None
    timeout: float = 30.0
    script: dict = field(default_factory=dict, hash=False)
    max_in_flight: int = 4

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        needed = {"toy": self.model_path, "command": self.command, "http": self.url}.get(self.kind, True)
        if needed is None:
            raise ValueError(f"{self.kind} backend is missing its location")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "toy":
            d["model_path"] = self.model_path
        elif self.kind == "command":
            d.update(command=self.command, timeout=self.timeout)
        elif self.kind == "http":
            d.update(url=self.url, timeout=self.timeout, max_in_flight=self.max_in_flight)
        else:
            d["entries"] = len(self.script)
        return d


class ToyBackend:
    def __init__(self, model: ToyAsrModel):
        self.model = model

    def transcribe(self, clip: AudioClip) -> str:
        try:
            return self.model.transcribe(clip)
        except ValueError as exc:
            raise ModelInputError(f"{clip.id}: {exc}") from exc


class ScriptedBackend:
    def __init__(self, table: dict):
        self.table = {str(k): str(v) for k, v in table.items()}

    def transcribe(self, clip: AudioClip) -> str:
        try:
            return normalize_text(self.table[clip.id])
        except KeyError:
            raise UnknownClipError(f"no scripted transcript for {clip.id!r}") from None


class CommandBackend:
    def __init__(self, template: str, timeout: float = 30.0):
        if "{wav}" not in template:
            raise ValueError("command template needs a {wav} placeholder")
        self.template = template
        self.timeout = timeout

    def transcribe(self, clip: AudioClip) -> str:
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "clip.wav")
            write_wav(clip, path)
            argv = [a.replace("{wav}", path) for a in shlex.split(self.template)]
            try:
                proc = subprocess.run(argv, capture_output=True, timeout=self.timeout)
            except subprocess.TimeoutExpired:
                raise BackendTimeoutError(f"{clip.id}: command timed out after {self.timeout}s") from None
            except OSError as exc:
                raise BackendLaunchError(f"{clip.id}: cannot launch command: {exc}") from None
        if proc.returncode != 0:
            raise BackendLaunchError(f"{clip.id}: command exited with status {proc.returncode}")
        try:
            out = proc.stdout.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedResponseError(f"{clip.id}: command output is not UTF-8") from None
        lines = out.splitlines()
        if len(lines) != 1:
            raise MalformedResponseError(f"{clip.id}: expected one output line, got {len(lines)}")
        return normalize_text(lines[0])


class HttpBackend:
    def __init__(self, url: str, timeout: float = 30.0, max_in_flight: int = 4):
        self.url = url
        self.timeout = timeout
        self.slots = threading.BoundedSemaphore(max_in_flight)

    def _post(self, body: bytes) -> bytes:
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "audio/wav"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return resp.read()

    def transcribe(self, clip: AudioClip) -> str:
        body = wav_bytes(clip)
        with self.slots:
            for _ in range(2):  # one retry on transient failure
                try:
                    raw = self._post(body)
                    break
                except urllib.error.HTTPError as exc:
                    err = BackendLaunchError(f"{clip.id}: HTTP {exc.code}")
                    if exc.code < 500:
                        raise err from None
                except (urllib.error.URLError, OSError) as exc:
                    reason = getattr(exc, "reason", exc)
                    if isinstance(reason, TimeoutError):
                        err = BackendTimeoutError(f"{clip.id}: no reply within {self.timeout}s")
                    else:
                        err = BackendLaunchError(f"{clip.id}: cannot reach {self.url}: {reason}")
            else:
                raise err
        try:
            text = json.loads(raw.decode("utf-8"))["text"]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError):
            raise MalformedResponseError(f"{clip.id}: reply is not JSON with a 'text' field") from None
        if not isinstance(text, str):
            raise MalformedResponseError(f"{clip.id}: 'text' is not a string")
        return normalize_text(text)


def make_backend(spec: AsrBackendSpec, model: ToyAsrModel | None = None):
    if spec.kind == "toy":
        return ToyBackend(model if model is not None else ToyAsrModel.load(spec.model_path))
    if spec.kind == "scripted":
        return ScriptedBackend(spec.script)
    if spec.kind == "command":
        return CommandBackend(spec.command, spec.timeout)
    return HttpBackend(spec.url, spec.timeout, spec.max_in_flight)


def transcribe(backend, clip: AudioClip) -> str:
    return backend.transcribe(clip)


def _attempt(backend, clip):
    try:
        return backend.transcribe(clip)
    except TranscriptionError as exc:
        return exc


def transcribe_batch(backend, clips, workers: int = 1) -> list:
    """(id, transcript or TranscriptionError) per clip, in input order."""
    clips = list(clips)
    if workers <= 1 or len(clips) <= 1:
        results = [_attempt(backend, c) for c in clips]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _attempt(backend, c), clips))
    return [(c.id, r) for c, r in zip(clips, results)]
