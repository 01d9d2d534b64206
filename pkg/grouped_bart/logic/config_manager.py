import logging
import os
from pathlib import Path
from typing import Any, Iterable, NamedTuple

import yaml
from pydantic import BaseModel, ValidationError

from grouped_bart.logic.bench import BenchmarkPlan, DatasetSpec, Method
from grouped_bart.logic.errors import ConfigError
from grouped_bart.logic.grouping import GroupSearchConfig
from grouped_bart.logic.sampler import McmcConfig

logger = logging.getLogger(__name__)

# --- Configuration ---
# config/ is a sibling of logic/ inside the package
BASE_DIR = Path(__file__).resolve().parent.parent
CONFIG_DIR = BASE_DIR / "config"
PROFILES_PATH = CONFIG_DIR / "profiles.yaml"
DEFAULT_PROFILE = "desk"

WORKERS_ENV = "GBART_WORKERS"
LOG_LEVEL_ENV = "GBART_LOG_LEVEL"

PLAN_KEYS = {"profile", "datasets", "methods", "folds", "replications", "master_seed", "workers", "record_wall_time"}


class Profile(NamedTuple):
    mcmc: McmcConfig
    search: GroupSearchConfig
    bench: dict[str, Any]


# --- Helper Functions ---
def load_profiles(path: str | Path = PROFILES_PATH) -> dict[str, dict[str, Any]]:
    """Reads every named profile from the YAML file."""
    path = Path(path)
    try:
        with open(path, "r") as f:
            profiles = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}") from e
    if not isinstance(profiles, dict) or not all(isinstance(v, dict) for v in profiles.values()):
        raise ConfigError(f"{path} must map profile names to settings")
    return profiles


def load_profile(name: str = DEFAULT_PROFILE, path: str | Path = PROFILES_PATH) -> Profile:
    profiles = load_profiles(path)
    if name not in profiles:
        raise ConfigError(f"unknown profile {name!r}; available: {sorted(profiles)}")
    entry = profiles[name]
    unknown = set(entry) - {"mcmc", "search", "bench"}
    if unknown:
        raise ConfigError(f"profile {name!r} has unknown sections {sorted(unknown)}")
    try:
        return Profile(
            McmcConfig.model_validate(entry.get("mcmc") or {}),
            GroupSearchConfig.model_validate(entry.get("search") or {}),
            dict(entry.get("bench") or {}),
        )
    except ValidationError as e:
        raise ConfigError(f"profile {name!r}: {e}") from e


def parse_value(text: str) -> Any:
    """YAML scalar or flow collection: ``50`` -> 50, ``[0.25, 0.25, 0.5]`` -> list, ``null`` -> None."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value {text!r}: {e}") from e


def _split_assignment(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"expected key=value, got {item!r}")
    key, value = item.split("=", 1)
    return key.strip(), value.strip()


def _updated(model: BaseModel, path: list[str], value: Any) -> BaseModel:
    payload = model.model_dump()
    target = payload
    for part in path[:-1]:
        nested = target.setdefault(part, {})
        if not isinstance(nested, dict):
            raise ConfigError(f"{'.'.join(path)}: {part!r} is not a nested setting")
        target = nested
    target[path[-1]] = value
    try:
        return type(model).model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"invalid override {'.'.join(path)}={value!r}: {e}") from e


def apply_overrides(
        models: tuple[McmcConfig, GroupSearchConfig],
        overrides: Iterable[str],
) -> tuple[McmcConfig, GroupSearchConfig]:
    """Applies ``mcmc.<field>=<value>`` and ``search.<field>[.<key>]=<value>`` overrides in order."""
    mcmc, search = models
    for item in overrides:
        key, raw = _split_assignment(item)
        section, _, rest = key.partition(".")
        if not rest:
            raise ConfigError(f"override {key!r} must be dotted, e.g. mcmc.ndpost")
        value = parse_value(raw)
        if section == "mcmc":
            mcmc = _updated(mcmc, rest.split("."), value)
        elif section == "search":
            search = _updated(search, rest.split("."), value)
        else:
            raise ConfigError(f"unknown override section {section!r}; use mcmc.* or search.*")
    return mcmc, search


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or not raw.strip():
        return 1
    try:
        workers = int(raw)
    except ValueError as e:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from e
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return workers


def read_plan_entries(path: str | Path) -> list[tuple[str, str]]:
    """``key = value`` lines in file order; blank lines and ``#`` comments are skipped."""
    path = Path(path)
    entries = []
    with open(path, "r") as f:
        for number, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                entries.append(_split_assignment(line))
            except ConfigError as e:
                raise ConfigError(f"{path}:{number}: {e}") from e
    return entries


def _csv_items(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def load_plan(path: str | Path, profile: str | None = None, overrides: Iterable[str] = ()) -> BenchmarkPlan:
    """Builds a BenchmarkPlan from a plan file on top of a profile.

    The profile comes from the ``profile`` key unless ``profile`` is given;
    command-line ``overrides`` apply after the file's own mcmc.*/search.* keys.
    """
    entries = read_plan_entries(path)
    fields: dict[str, str] = {}
    dotted: list[str] = []
    for key, value in entries:
        if key.startswith(("mcmc.", "search.")):
            dotted.append(f"{key}={value}")
        elif key in PLAN_KEYS:
            fields[key] = value
        else:
            raise ConfigError(f"{path}: unknown plan key {key!r}")

    chosen = load_profile(profile or fields.pop("profile", DEFAULT_PROFILE))
    fields.pop("profile", None)
    mcmc, search = apply_overrides((chosen.mcmc, chosen.search), [*dotted, *overrides])

    if "datasets" not in fields:
        raise ConfigError(f"{path}: plan needs a datasets entry")
    plan: dict[str, Any] = {
        **chosen.bench,
        "datasets": [DatasetSpec.parse(d) for d in _csv_items(fields.pop("datasets"))],
        "mcmc": mcmc,
        "search": search,
        "workers": default_workers(),
    }
    if "methods" in fields:
        try:
            plan["methods"] = [Method(m.upper()) for m in _csv_items(fields.pop("methods"))]
        except ValueError as e:
            raise ConfigError(f"{path}: methods must be GBART and/or BART: {e}") from e
    plan.update({k: parse_value(v) for k, v in fields.items()})
    try:
        result = BenchmarkPlan.model_validate(plan)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.info("Loaded plan %s: %d dataset(s), methods %s, %d fold(s), %d replication(s)", path,
                len(result.datasets), [m.value for m in result.methods], result.folds, result.replications)
    return result
