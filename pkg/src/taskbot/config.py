"""Runtime configuration: JSON file, overridden by TBF_* environment vars.

A config wires backends to roles, points at the task catalog, and sets the
turn budgets. Every field has a usable default so the CLI can run with no
file at all.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .gateway import (
    Backend,
    RemoteBackend,
    RuleNDPBackend,
    ScriptedBackend,
    TemplateLibrary,
    load_guard_rules,
)
from .orchestrator import BACKEND_ROLES, Budgets, Orchestrator
from .taskgraph import Task, load_catalog


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AppConfig:
    catalog_dir: str = "data/catalog"
    template_dir: str | None = None
    log_path: str | None = None
    guard_rules: str | None = None
    host: str = "127.0.0.1"
    port: int = 8080
    search_k: int = 3
    context_budget_tokens: int = 1000
    idle_minutes: float = 30.0
    budgets: Budgets = field(default_factory=Budgets)
    backends: Mapping[str, str] = field(
        default_factory=lambda: {role: "rule" for role in BACKEND_ROLES}
    )


_TOP_KEYS = {
    "catalog_dir",
    "template_dir",
    "log_path",
    "guard_rules",
    "host",
    "port",
    "search_k",
    "context_budget_tokens",
    "idle_minutes",
    "budgets",
    "backends",
}
_BUDGET_KEYS = {"ndp_ms", "llm_ms", "global_ms"}

_INT_FIELDS = ("port", "search_k", "context_budget_tokens")
_FLOAT_FIELDS = ("idle_minutes",)


def _coerce(name: str, value, kind):
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected {kind.__name__}, got {value!r}") from exc


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> AppConfig:
    """Build a config from defaults, then the JSON file, then TBF_* vars.

    Environment names: flat fields map directly (TBF_PORT, TBF_CATALOG_DIR),
    budget fields drop the nesting (TBF_NDP_MS), backend roles get a prefix
    (TBF_BACKEND_QA).
    """
    env = os.environ if env is None else env
    config = AppConfig()

    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(doc) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        budgets_doc = doc.pop("budgets", None)
        backends_doc = doc.pop("backends", None)
        config = replace(config, **doc)
        if budgets_doc is not None:
            unknown = set(budgets_doc) - _BUDGET_KEYS
            if unknown:
                raise ConfigError(f"unknown budget keys: {sorted(unknown)}")
            merged = {k: _coerce(f"budgets.{k}", v, float) for k, v in budgets_doc.items()}
            try:
                config = replace(config, budgets=replace(config.budgets, **merged))
            except ValueError as exc:
                raise ConfigError(str(exc))
        if backends_doc is not None:
            unknown = set(backends_doc) - set(BACKEND_ROLES)
            if unknown:
                raise ConfigError(f"unknown backend roles: {sorted(unknown)}")
            merged_backends = dict(config.backends)
            merged_backends.update({k: str(v) for k, v in backends_doc.items()})
            config = replace(config, backends=merged_backends)

    updates: dict = {}
    for name in ("catalog_dir", "template_dir", "log_path", "guard_rules", "host"):
        value = env.get(f"TBF_{name.upper()}")
        if value is not None:
            updates[name] = value
    for name in _INT_FIELDS:
        value = env.get(f"TBF_{name.upper()}")
        if value is not None:
            updates[name] = _coerce(name, value, int)
    for name in _FLOAT_FIELDS:
        value = env.get(f"TBF_{name.upper()}")
        if value is not None:
            updates[name] = _coerce(name, value, float)
    if updates:
        config = replace(config, **updates)

    budget_updates = {}
    for name in _BUDGET_KEYS:
        value = env.get(f"TBF_{name.upper()}")
        if value is not None:
            budget_updates[name] = _coerce(name, value, float)
    if budget_updates:
        try:
            config = replace(config, budgets=replace(config.budgets, **budget_updates))
        except ValueError as exc:
            raise ConfigError(str(exc))

    backend_updates = {}
    for role in BACKEND_ROLES:
        value = env.get(f"TBF_BACKEND_{role.upper()}")
        if value is not None:
            backend_updates[role] = value
    if backend_updates:
        merged_backends = dict(config.backends)
        merged_backends.update(backend_updates)
        config = replace(config, backends=merged_backends)

    for name in _INT_FIELDS:
        value = getattr(config, name)
        if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
            raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    if config.idle_minutes <= 0:
        raise ConfigError("idle_minutes must be positive")
    if config.budgets.ndp_ms >= config.budgets.global_ms:
        raise ConfigError(
            f"ndp_ms ({config.budgets.ndp_ms}) must be below "
            f"global_ms ({config.budgets.global_ms})"
        )
    return config


def config_to_dict(config: AppConfig) -> dict:
    """Serialize a config with every field explicit, defaults included."""
    return {
        "catalog_dir": config.catalog_dir,
        "template_dir": config.template_dir,
        "log_path": config.log_path,
        "guard_rules": config.guard_rules,
        "host": config.host,
        "port": config.port,
        "search_k": config.search_k,
        "context_budget_tokens": config.context_budget_tokens,
        "idle_minutes": config.idle_minutes,
        "budgets": {
            "ndp_ms": config.budgets.ndp_ms,
            "llm_ms": config.budgets.llm_ms,
            "global_ms": config.budgets.global_ms,
        },
        "backends": dict(config.backends),
    }


def build_backend(spec: str) -> Backend:
    """Instantiate a backend from its config string.

    Three forms: "rule" (deterministic pattern NDP), "scripted:<path>"
    (canned outputs from a JSON file), "remote:<url>" (HTTP completion API).
    """
    if spec == "rule":
        return RuleNDPBackend()
    if spec.startswith("scripted:"):
        path = spec[len("scripted:"):]
        if not Path(path).is_file():
            raise ConfigError(f"scripted backend file not found: {path}")
        return ScriptedBackend.from_file(path)
    if spec.startswith("remote:"):
        return RemoteBackend(spec[len("remote:"):])
    raise ConfigError(f"unknown backend spec: {spec!r}")


def build_orchestrator(
    config: AppConfig, catalog: list[Task] | None = None
) -> Orchestrator:
    """Wire a live orchestrator, failing fast on any missing referenced path."""
    if catalog is None:
        try:
            catalog = load_catalog(config.catalog_dir)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc))
    if config.template_dir is not None and not Path(config.template_dir).is_dir():
        raise ConfigError(f"template dir not found: {config.template_dir}")
    backends = {role: build_backend(spec) for role, spec in config.backends.items()}
    templates = TemplateLibrary(config.template_dir) if config.template_dir else None
    if config.guard_rules is not None:
        if not Path(config.guard_rules).is_file():
            raise ConfigError(f"guard rules file not found: {config.guard_rules}")
        guard_rules = load_guard_rules(config.guard_rules)
        return Orchestrator(
            catalog=catalog,
            backends=backends,
            budgets=config.budgets,
            templates=templates,
            log_path=config.log_path,
            idle_timeout_s=config.idle_minutes * 60.0,
            search_k=config.search_k,
            context_budget_tokens=config.context_budget_tokens,
            guard_rules=guard_rules,
        )
    return Orchestrator(
        catalog=catalog,
        backends=backends,
        budgets=config.budgets,
        templates=templates,
        log_path=config.log_path,
        idle_timeout_s=config.idle_minutes * 60.0,
        search_k=config.search_k,
        context_budget_tokens=config.context_budget_tokens,
    )
