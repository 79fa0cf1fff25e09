"""Pipeline configuration: a YAML file with one section per stage.

Defaults: FBA with r = 1,
RF grid n_estimators in [50, 200] and max_depth in [1, 20] sampled five
times, five-fold CV, 90/10 train/validation split, top-500 hand features.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from vrident.errors import ConfigError

CONFIG_ENV_VAR = "VRIDENT_CONFIG"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BlockingConfig(_Section):
    mode: Literal["fba", "fbl"] = "fba"
    r: float = Field(1.0, gt=0.0, le=2.0)
    fbl_length: float = Field(1.0, gt=0.0, description="FBL block length in seconds")
    zero_block_threshold: float = Field(0.8, ge=0.0, le=1.0)


class ClassifierConfig(_Section):
    n_estimators: tuple[int, int] = (50, 200)
    max_depth: tuple[int, int] = (1, 20)
    iterations: int = Field(5, ge=1)
    folds: int = Field(5, ge=2)
    train_fraction: float = Field(0.9, gt=0.0, lt=1.0)

    @field_validator("n_estimators", "max_depth")
    @classmethod
    def _ordered(cls, v):
        lo, hi = v
        if lo < 1 or hi < lo:
            raise ValueError("range must satisfy 1 <= low <= high")
        return v


class FeatureConfig(_Section):
    hj_top_k: int = Field(500, ge=1)
    fe_selection: str = Field("all", min_length=1)
    element_map: Optional[Path] = None


class ValidationConfig(_Section):
    quat_tolerance: float = Field(0.05, gt=0.0)


class PipelineConfig(_Section):
    seed: int = Field(0, ge=0, lt=2**64)
    jobs: int = Field(1, ge=1)
    app_groups: Optional[Path] = None
    blocking: BlockingConfig = BlockingConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    features: FeatureConfig = FeatureConfig()
    validation: ValidationConfig = ValidationConfig()

    def with_overrides(self, **dotted) -> "PipelineConfig":
        """``cfg.with_overrides(**{"blocking.r": 0.5, "seed": 3})``"""
        data = self.model_dump()
        for key, value in dotted.items():
            if value is None:
                continue
            node = data
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = value
        try:
            return PipelineConfig.model_validate(data)
        except ValidationError as exc:
            raise ConfigError(_format_errors(exc, None)) from None

    def config_hash(self) -> str:
        payload = self.model_dump_json(exclude={"jobs"})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _node_line(root, loc) -> Optional[int]:
    """Line (1-based) of the YAML node addressed by a pydantic error location."""
    node = root
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            hit = None
            for k, v in node.value:
                if k.value == str(key):
                    hit = (k, v)
                    break
            if hit is None:
                break
            line = hit[0].start_mark.line + 1
            node = hit[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            break
    return line


def _format_errors(exc: ValidationError, root, source: str = "<config>") -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        at = _node_line(root, err["loc"]) if root is not None else None
        where = f"{source}:{at}" if at else source
        lines.append(f"{where}: {loc}: {err['msg']}")
    return "\n".join(lines)


def load_config(path: "str | Path | None" = None) -> PipelineConfig:
    """Load and schema-check a config file.

    With no path, falls back to ``$VRIDENT_CONFIG`` and then to defaults.
    Relative paths inside the file resolve against the file's directory.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1: top level must be a mapping")
    try:
        cfg = PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, root, str(path))) from None
    base = path.parent
    updates = {}
    if cfg.app_groups is not None and not cfg.app_groups.is_absolute():
        updates["app_groups"] = base / cfg.app_groups
    if cfg.features.element_map is not None and not cfg.features.element_map.is_absolute():
        updates["features.element_map"] = base / cfg.features.element_map
    return cfg.with_overrides(**updates) if updates else cfg
