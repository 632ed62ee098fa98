"""Command-line entry point.

Exit codes: 0 success, 1 domain failure, 2 environment or configuration
error, 3 evaluation finished but exceeded the failure threshold.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import dataset, metrics, prompts, registry, selector
from ._jsonl import write_records
from .errors import ConfigError, CoverageError, ReplayMiss, ToolSelectError, ValidationError

EXIT_OK, EXIT_DOMAIN, EXIT_ENV, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("toolselect")


@dataclass
class RunConfig:
    cards: str | None = None
    taxonomy: str | None = None
    instructions: str | None = None
    fixture: str | None = None
    out: str = "out"
    seed: int = 0
    ratio: float = 0.8
    k: int = 1
    mode: str = "multimodal"
    backend: str = "baseline"
    endpoint: str | None = None
    model: str | None = None
    token_env: str | None = None
    temperature: float | None = None
    max_inflight: int = 4
    timeout_s: float = 30.0
    retries: int = 2
    retry_backoff_s: float = 0.5
    send_attachments: bool = False
    failure_threshold: float = 0.05
    max_per_functionality: int = 5
    label: str | None = None

    def validate(self, required: Sequence[str] = ()) -> None:
        for name in required:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"--{name} is required for this command")
        for name in ("cards", "taxonomy", "instructions", "fixture"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"{name} file not found: {value}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0 < self.ratio < 1:
            raise ConfigError("ratio must be strictly between 0 and 1")
        if not 0 <= self.failure_threshold <= 1:
            raise ConfigError("failure_threshold must be within [0, 1]")

    def backend_config(self) -> selector.BackendConfig:
        try:
            kind = selector.BackendKind.parse(self.backend)
        except ValueError:
            raise ConfigError(f"unknown backend {self.backend!r}") from None
        return selector.BackendConfig(
            kind=kind,
            endpoint=self.endpoint,
            model=self.model,
            token_env=self.token_env,
            timeout_s=self.timeout_s,
            max_retries=self.retries,
            max_inflight=self.max_inflight,
            temperature=self.temperature,
            fixture=self.fixture,
            retry_backoff_s=self.retry_backoff_s,
            send_attachments=self.send_attachments,
        )

    def prompt_mode(self) -> selector.PromptMode:
        try:
            return selector.PromptMode.parse(self.mode)
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}") from None


_CONFIG_FIELDS = {f.name for f in fields(RunConfig)}


def load_config(path: str | None, overrides: dict[str, Any]) -> RunConfig:
    """Merge a YAML/JSON config document with command-line overrides (flags win)."""
    values: dict[str, Any] = {}
    if path:
        try:
            doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
        for key, value in doc.items():
            name = key.replace("-", "_")
            if name not in _CONFIG_FIELDS:
                raise ConfigError(f"unknown config field {key!r}")
            values[name] = value
    values.update({k: v for k, v in overrides.items() if v is not None and k in _CONFIG_FIELDS})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# Shared loading


def _taxonomy(cfg: RunConfig) -> registry.Taxonomy:
    return registry.load_taxonomy(cfg.taxonomy) if cfg.taxonomy else registry.default_taxonomy()


def _registry(cfg: RunConfig) -> registry.Registry:
    taxonomy = _taxonomy(cfg)
    return registry.build_registry(registry.load_cards(cfg.cards, taxonomy), taxonomy)


def _fmt(n: int) -> str:
    return f"{n:,}"


# --------------------------------------------------------------------------
# Commands


def cmd_validate(cfg: RunConfig) -> int:
    cfg.validate(required=("cards",))
    issues = []
    taxonomy = None
    try:
        taxonomy = _taxonomy(cfg)
    except ValidationError as exc:
        issues.extend(exc.issues)
    cards = []
    try:
        cards = registry.load_cards(cfg.cards, taxonomy)
    except ValidationError as exc:
        issues.extend(exc.issues)
    if cfg.instructions:
        reg = None
        if taxonomy is not None and not issues:
            reg = registry.build_registry(cards, taxonomy)
        try:
            dataset.load_instructions(cfg.instructions, reg)
        except ValidationError as exc:
            issues.extend(exc.issues)
    for issue in issues:
        print(str(issue), file=sys.stderr)
    if issues:
        print(f"validation failed: {len(issues)} issue(s)", file=sys.stderr)
        return EXIT_DOMAIN
    print(f"ok: {len(cards)} cards" + (f", instructions {cfg.instructions}" if cfg.instructions else ""))
    return EXIT_OK


def cmd_filter(cfg: RunConfig) -> int:
    cfg.validate(required=("cards",))
    cards = registry.load_cards(cfg.cards, _taxonomy(cfg))
    policy = registry.FilterPolicy(max_per_functionality=cfg.max_per_functionality)
    outcome = registry.apply_filters(cards, policy)
    out = Path(cfg.out)
    registry.save_cards(out / "kept_cards.jsonl", outcome.kept)
    write_records(out / "rejected_cards.jsonl", (
        {"reason": reason.value, "card": card.to_record()} for card, reason in outcome.rejected
    ))
    print(f"kept {len(outcome.kept)} of {len(cards)} cards")
    for reason, count in outcome.reason_counts().items():
        print(f"  {reason}: {count}")
    return EXIT_OK


def cmd_split(cfg: RunConfig) -> int:
    cfg.validate(required=("cards", "instructions"))
    reg = _registry(cfg)
    instrs = dataset.load_instructions(cfg.instructions, reg)
    result = dataset.split_dataset(instrs, cfg.ratio, cfg.seed, reg)
    dataset.write_split(result, cfg.out)
    rows = dataset.split_summary(result)
    print("Modality: Train (w/ split) / Train (w/o split) / Test")
    for modality, row in rows.items():
        print(f"{modality.capitalize()}: {_fmt(row['train_expanded'])} / "
              f"{_fmt(row['train_distinct'])} / {_fmt(row['test'])}")
    total = {key: sum(r[key] for r in rows.values()) for key in ("train_expanded", "train_distinct", "test")}
    print(f"Total: {_fmt(total['train_expanded'])} / {_fmt(total['train_distinct'])} / {_fmt(total['test'])}")
    if result.promoted:
        print(f"promoted {len(result.promoted)} test queries to cover train APIs")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    cfg.validate(required=("cards", "instructions"))
    mode = cfg.prompt_mode()
    backend_cfg = cfg.backend_config()
    reg = _registry(cfg)
    instrs = dataset.load_instructions(cfg.instructions, reg)
    backend = selector.make_backend(backend_cfg, reg, cfg.k)
    run = selector.run_eval(
        backend, instrs, cfg.k, mode, reg,
        max_inflight=backend_cfg.max_inflight,
        failure_threshold=cfg.failure_threshold,
        seed=cfg.seed,
        config=backend_cfg,
    )
    out = Path(cfg.out)
    selector.write_run(run, out)

    gold = {i.id: dataset.resolve_gold(i, reg) for i in instrs}
    scored = metrics.score_records(run.records, gold)
    parts = dataset.partition_subsets(instrs, reg)
    manifest_ref = {
        "label": cfg.label or cfg.model or backend_cfg.kind.value,
        "backend": backend_cfg.kind.value,
        "config_hash": backend_cfg.config_hash(),
        "mode": mode.value,
        "k": cfg.k,
        "seed": cfg.seed,
        "n_records": len(run.records),
        "error_records": run.errors,
    }
    rep = metrics.report(scored, parts, reg.corpus, cfg.k, manifest_ref)
    (out / "report.json").write_text(metrics.render_report(rep, "machine"), encoding="utf-8")
    (out / "report.md").write_text(metrics.render_report(rep, "markdown"), encoding="utf-8")
    print(f"n={rep.n} acc={metrics.pct(rep.acc)} hallu={metrics.pct(rep.hallu)} "
          f"format_acc={metrics.pct(rep.format_acc)}"
          + (f" recall={metrics.pct(rep.recall)}" if rep.recall is not None else ""))
    if run.failed:
        print(f"run failed: {run.errors} error records exceed threshold {cfg.failure_threshold}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_gen_prompt(cfg: RunConfig, api_name: str, ambiguous: bool, extra: Sequence[str]) -> int:
    cfg.validate(required=("cards",))
    reg = _registry(cfg)
    card = reg.get(api_name)
    if card is None:
        print(f"unknown api {api_name!r}", file=sys.stderr)
        return EXIT_DOMAIN
    sys.stdout.write(prompts.build_generation_prompt(card, ambiguous, extra_prohibited=extra))
    return EXIT_OK


def cmd_report(path: str, style: str, label: str | None) -> int:
    rep = metrics.load_report(path)
    sys.stdout.write(metrics.render_report(rep, style, label))
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON config document; flags override its fields")
    p.add_argument("--cards")
    p.add_argument("--taxonomy", help="taxonomy JSON (defaults to the bundled one)")
    p.add_argument("--instructions")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--ratio", type=float)


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int)
    p.add_argument("--mode", choices=["multimodal", "placeholder", "closed-context"])
    p.add_argument("--backend", choices=["replay", "baseline", "remote"])
    p.add_argument("--fixture")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--token-env", dest="token_env")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-inflight", dest="max_inflight", type=int)
    p.add_argument("--timeout-s", dest="timeout_s", type=float)
    p.add_argument("--retries", type=int)
    p.add_argument("--retry-backoff-s", dest="retry_backoff_s", type=float)
    p.add_argument("--failure-threshold", dest="failure_threshold", type=float)
    p.add_argument("--label", help="row label for the markdown report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toolselect", description="Registry, split, selection and scoring harness for API-selection benchmarks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("validate", "filter", "split"):
        p = sub.add_parser(name)
        _common(p)
        if name == "filter":
            p.add_argument("--max-per-functionality", dest="max_per_functionality", type=int)

    p = sub.add_parser("eval")
    _common(p)
    _eval_flags(p)

    p = sub.add_parser("gen-prompt")
    _common(p)
    p.add_argument("api_name")
    p.add_argument("--ambiguous", action="store_true")
    p.add_argument("--prohibit", action="append", default=[], help="extra prohibited word (repeatable)")

    p = sub.add_parser("report")
    p.add_argument("report_json")
    p.add_argument("--style", choices=["markdown", "machine"], default="markdown")
    p.add_argument("--label")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.report_json, args.style, args.label)
        cfg = load_config(args.config, vars(args))
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "filter":
            return cmd_filter(cfg)
        if args.command == "split":
            return cmd_split(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        return cmd_gen_prompt(cfg, args.api_name, args.ambiguous, args.prohibit)
    except (ValidationError, CoverageError) as exc:
        issues = getattr(exc, "issues", None) or [exc]
        for issue in issues:
            print(str(issue), file=sys.stderr)
        return EXIT_DOMAIN
    except (ConfigError, ReplayMiss, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except ToolSelectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
