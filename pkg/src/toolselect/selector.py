"""Prompt assembly, selector backends and the repeated-inference runner."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Protocol

import httpx

from ._jsonl import SCHEMA_VERSION, iter_records, write_records
from .dataset import Instruction
from .errors import BackendError, ConfigError, ReplayMiss, ValidationError
from .outparse import render_prediction
from .registry import UNKNOWN, Registry

log = logging.getLogger(__name__)

FORMAT_DIRECTIVE = (
    "Recommend one API for this request. Answer only in the format "
    "{api_name: [Recommended API]}"
)
PLACEHOLDERS = {"image": "<Image>", "audio": "<Audio>", "video": "<Video>"}
RETRYABLE_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


class PromptMode(str, Enum):
    MULTIMODAL = "multimodal"
    PLACEHOLDER = "placeholder"
    CLOSED_CONTEXT = "closed_context"

    @classmethod
    def parse(cls, value: str) -> "PromptMode":
        return cls(value.replace("-", "_"))


class BackendKind(str, Enum):
    REPLAY = "replay"
    KEYWORD_BASELINE = "keyword_baseline"
    REMOTE = "remote"

    @classmethod
    def parse(cls, value: str) -> "BackendKind":
        return cls.KEYWORD_BASELINE if value == "baseline" else cls(value)


@dataclass(frozen=True)
class AssembledPrompt:
    text: str
    manifest: tuple[str, ...] = ()
    # the bare instruction text, for backends that only look at the request
    query: str = ""


@dataclass(frozen=True)
class SelectRequest:
    instruction_id: str
    sample_index: int
    prompt: AssembledPrompt


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    endpoint: str | None = None
    model: str | None = None
    token_env: str | None = None
    timeout_s: float = 30.0
    max_retries: int = 2
    max_inflight: int = 4
    temperature: float | None = None
    fixture: str | None = None
    retry_backoff_s: float = 0.5
    send_attachments: bool = False

    def __post_init__(self) -> None:
        if self.max_inflight < 1:
            raise ConfigError("max_inflight must be >= 1")
        if self.timeout_s <= 0:
            raise ConfigError("timeout_s must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.kind is BackendKind.REPLAY and not self.fixture:
            raise ConfigError("replay backend needs a fixture path")
        if self.kind is BackendKind.REMOTE and not (self.endpoint and self.model):
            raise ConfigError("remote backend needs an endpoint and a model name")

    def resolved_temperature(self, k: int) -> float:
        if self.temperature is not None:
            return self.temperature
        return 0.7 if k > 1 else 0.0

    def config_hash(self) -> str:
        # max_inflight changes scheduling only, never the records
        payload = {key: (v.value if isinstance(v, Enum) else v)
                   for key, v in asdict(self).items() if key != "max_inflight"}
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class PredictionRecord:
    instruction_id: str
    sample_index: int
    raw: str
    latency_ms: float
    backend: str
    error: str | None = None

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "instruction_id": self.instruction_id,
            "sample_index": self.sample_index,
            "backend": self.backend,
            "raw": self.raw,
        }
        if self.error is not None:
            rec["error"] = self.error
        return rec


# --------------------------------------------------------------------------
# Prompt assembly


def first_sentence(text: str) -> str:
    flat = " ".join(text.split())
    match = re.search(r"(?<=[.!?])\s", flat)
    return flat[: match.start()] if match else flat


def registry_digest(registry: Registry) -> list[str]:
    return [f"{name} — {first_sentence(card.description)}" for name, card in registry.cards.items()]


def assemble_prompt(instr: Instruction, mode: PromptMode, registry: Registry) -> AssembledPrompt:
    """Build the model input for one instruction.

    ``placeholder`` replaces each attachment by its literal token and drops
    the content; ``multimodal`` passes attachment URIs in the manifest;
    ``closed_context`` prepends one line per registered API. The format
    directive is always the last line.
    """
    parts: list[str] = []
    if mode is PromptMode.CLOSED_CONTEXT:
        parts.append(f"Available APIs (answer {UNKNOWN} if none fits):")
        parts.extend(registry_digest(registry))
        parts.append("")
    request = instr.text
    manifest: tuple[str, ...] = ()
    if mode is PromptMode.PLACEHOLDER:
        tokens = " ".join(PLACEHOLDERS[a.modality] for a in instr.attachments)
        if tokens:
            request = f"{request} {tokens}"
    elif mode is PromptMode.MULTIMODAL:
        manifest = tuple(a.uri for a in instr.attachments)
    parts.append(f"Request: {request}")
    parts.append(FORMAT_DIRECTIVE)
    return AssembledPrompt("\n".join(parts), manifest, instr.text)


# --------------------------------------------------------------------------
# Backends


class Backend(Protocol):
    kind: BackendKind

    def select(self, request: SelectRequest) -> str: ...


class ReplayBackend:
    """Serve stored responses keyed by ``(instruction_id, sample_index)``.

    Extra fields are ignored, so a previous run's record file is itself a
    valid fixture.
    """

    kind = BackendKind.REPLAY

    def __init__(self, fixture: str | Path):
        self._table: dict[tuple[str, int], str] = {}
        issues = []
        for line, rec, issue in iter_records(fixture):
            if issue:
                issues.append(issue)
                continue
            try:
                key = (str(rec["instruction_id"]), int(rec["sample_index"]))
                raw = rec["raw"]
            except (KeyError, TypeError, ValueError):
                issues.append(f"{fixture}:{line}: fixture record needs instruction_id, sample_index, raw")
                continue
            if key in self._table:
                issues.append(f"{fixture}:{line}: duplicate fixture key {key}")
                continue
            self._table[key] = raw
        if issues:
            raise ValidationError("; ".join(str(i) for i in issues))

    def select(self, request: SelectRequest) -> str:
        key = (request.instruction_id, request.sample_index)
        try:
            return self._table[key]
        except KeyError:
            raise ReplayMiss(f"no fixture entry for {key}") from None


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def normalize_tokens(text: str) -> set[str]:
    return {t for t in _TOKEN_SPLIT.split(text.lower()) if len(t) >= 3}


class KeywordBaseline:
    """Pick the card whose description shares the most tokens with the request.

    Ties go to the lexicographically smallest name; with no overlap at all
    the answer is ``Unknown``.
    """

    kind = BackendKind.KEYWORD_BASELINE

    def __init__(self, registry: Registry):
        self._index = sorted((name, normalize_tokens(card.description)) for name, card in registry.cards.items())

    def choose(self, text: str) -> str:
        query = normalize_tokens(text)
        best, best_score = UNKNOWN, 0
        for name, tokens in self._index:
            score = len(query & tokens)
            if score > best_score:
                best, best_score = name, score
        return best

    def select(self, request: SelectRequest) -> str:
        return render_prediction(self.choose(request.prompt.query or request.prompt.text))


class RemoteBackend:
    """Chat-completions style HTTP backend with bounded retries."""

    kind = BackendKind.REMOTE

    def __init__(self, config: BackendConfig, temperature: float, client: httpx.Client | None = None):
        self.config = config
        self.temperature = temperature
        headers = {"Content-Type": "application/json"}
        if config.token_env:
            token = os.environ.get(config.token_env)
            if not token:
                raise ConfigError(f"auth environment variable {config.token_env!r} is not set")
            headers["Authorization"] = f"Bearer {token}"
        self._client = client or httpx.Client(
            timeout=httpx.Timeout(config.timeout_s),
            limits=httpx.Limits(max_connections=config.max_inflight),
        )
        self._headers = headers

    def close(self) -> None:
        self._client.close()

    def _body(self, request: SelectRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt.text}],
            "temperature": self.temperature,
        }
        if self.config.send_attachments and request.prompt.manifest:
            body["attachments"] = list(request.prompt.manifest)
        return body

    def select(self, request: SelectRequest) -> str:
        attempts = self.config.max_retries + 1
        body = self._body(request)
        last_error = "no attempt made"
        for attempt in range(1, attempts + 1):
            try:
                resp = self._client.post(self.config.endpoint, json=body, headers=self._headers)
            except httpx.TimeoutException:
                last_error = f"timeout after {self.config.timeout_s}s"
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError):
                        raise BackendError("malformed chat-completions response") from None
                last_error = f"HTTP {resp.status_code}"
                if resp.status_code not in RETRYABLE_STATUS:
                    raise BackendError(last_error)
            if attempt < attempts and self.config.retry_backoff_s > 0:
                time.sleep(self.config.retry_backoff_s * 2 ** (attempt - 1))
        raise BackendError(f"{last_error} ({attempts} attempts)")


def make_backend(config: BackendConfig, registry: Registry, k: int = 1) -> Backend:
    if config.kind is BackendKind.REPLAY:
        return ReplayBackend(config.fixture)
    if config.kind is BackendKind.KEYWORD_BASELINE:
        return KeywordBaseline(registry)
    return RemoteBackend(config, config.resolved_temperature(k))


def select(backend: Backend, request: SelectRequest) -> str:
    return backend.select(request)


# --------------------------------------------------------------------------
# Runner


@dataclass
class EvalRun:
    records: list[PredictionRecord]
    manifest: dict[str, Any]
    failed: bool = False
    errors: int = field(default=0)


def run_eval(
    backend: Backend,
    instructions: Iterable[Instruction],
    k: int,
    mode: PromptMode,
    registry: Registry,
    *,
    max_inflight: int = 1,
    failure_threshold: float = 0.05,
    seed: int | None = None,
    config: BackendConfig | None = None,
) -> EvalRun:
    """Run ``k`` selections per instruction and collect canonical-ordered records.

    Backend errors become error records and the run carries on; a replay
    miss aborts it. The run is marked failed when the share of error
    records exceeds ``failure_threshold``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_inflight < 1:
        raise ValueError("max_inflight must be >= 1")
    instructions = list(instructions)
    started = datetime.now(timezone.utc)
    requests = [
        SelectRequest(instr.id, j, prompt)
        for instr in instructions
        for prompt in [assemble_prompt(instr, mode, registry)]
        for j in range(1, k + 1)
    ]
    results: dict[tuple[str, int], PredictionRecord] = {}
    lock = threading.Lock()
    kind = backend.kind.value

    def work(req: SelectRequest) -> None:
        t0 = time.perf_counter()
        try:
            raw, error = backend.select(req), None
        except BackendError as exc:
            raw, error = "", str(exc)
            log.warning("selection failed for %s#%d: %s", req.instruction_id, req.sample_index, exc)
        rec = PredictionRecord(req.instruction_id, req.sample_index, raw,
                               (time.perf_counter() - t0) * 1000.0, kind, error)
        with lock:
            results[(req.instruction_id, req.sample_index)] = rec

    if max_inflight == 1:
        for req in requests:
            work(req)
    else:
        with ThreadPoolExecutor(max_workers=max_inflight) as pool:
            futures = [pool.submit(work, req) for req in requests]
            done, pending = wait(futures, return_when=FIRST_EXCEPTION)
            for fut in pending:
                fut.cancel()
            for fut in done:
                fut.result()

    records = [results[key] for key in sorted(results)]
    errors = sum(r.error is not None for r in records)
    rate = errors / len(records) if records else 0.0
    failed = rate > failure_threshold
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "backend": kind,
        "config_hash": config.config_hash() if config else None,
        "mode": mode.value,
        "k": k,
        "seed": seed,
        "n_instructions": len(instructions),
        "n_records": len(records),
        "error_records": errors,
        "failure_rate": rate,
        "failure_threshold": failure_threshold,
        "failed": failed,
        "started_at": started.isoformat(),
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    return EvalRun(records=records, manifest=manifest, failed=failed, errors=errors)


def write_run(run: EvalRun, out_dir: str | Path) -> dict[str, Path]:
    """Write records, per-record timings and the run manifest.

    Timings and timestamps live outside the record file so that replayed
    runs produce byte-identical records.
    """
    out_dir = Path(out_dir)
    paths = {
        "records": out_dir / "records.jsonl",
        "timings": out_dir / "timings.jsonl",
        "manifest": out_dir / "run_manifest.json",
    }
    write_records(paths["records"], (r.to_record() for r in run.records))
    write_records(paths["timings"], (
        {"instruction_id": r.instruction_id, "sample_index": r.sample_index, "latency_ms": round(r.latency_ms, 3)}
        for r in run.records
    ))
    paths["manifest"].write_text(json.dumps(run.manifest, indent=2) + "\n", encoding="utf-8")
    return paths


def load_records(path: str | Path) -> list[PredictionRecord]:
    out = []
    for line, rec, issue in iter_records(path):
        if issue:
            raise ValidationError([issue])
        out.append(PredictionRecord(
            instruction_id=rec["instruction_id"], sample_index=rec["sample_index"], raw=rec["raw"],
            latency_ms=0.0, backend=rec.get("backend", ""), error=rec.get("error"),
        ))
    return out
