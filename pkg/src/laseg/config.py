"""Sectioned ``key = value`` configuration for the command-line pipeline."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .clic import ClicParams
from .fusion import SimpleParams
from .levelset import CvParams
from .phantom import PhantomParams
from .registration import RegParams


class ConfigError(ValueError):
    pass


SELECTION_MODES = ("simple", "random", "both")


@dataclass(frozen=True)
class Paths:
    target_image: str = ""
    target_label: str = ""
    atlas_image_dir: str = ""
    atlas_label_dir: str = ""
    output_dir: str = "laseg-out"


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    seed: int = 0
    selection: str = "simple"
    leave_one_out: bool = False
    n_cases: int = 12
    clic: ClicParams = field(default_factory=ClicParams)
    registration: RegParams = field(default_factory=RegParams)
    simple: SimpleParams = field(default_factory=SimpleParams)
    levelset: CvParams = field(default_factory=CvParams)
    phantom: PhantomParams = field(default_factory=PhantomParams)
    source: str = ""

    @property
    def modes(self) -> tuple[str, ...]:
        return ("simple", "random") if self.selection == "both" else (self.selection,)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed, registration=replace(self.registration, seed=seed))

    def with_output(self, out: str) -> "PipelineConfig":
        return replace(self, paths=replace(self.paths, output_dir=str(out)))


def _parse_pyramid(text: str) -> tuple[tuple[float, int], ...]:
    levels = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        sigma, _, factor = part.partition(":")
        if not factor:
            raise ConfigError(f"pyramid level {part!r} must look like sigma:factor")
        levels.append((float(sigma), int(factor)))
    return tuple(levels)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(f"{s!r}:{f}" for s, f in v)
        return " ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(section: str, name: str, default, text: str):
    text = text.strip()
    try:
        if name == "pyramid":
            return _parse_pyramid(text)
        if name == "mu" and section == "levelset":
            return None if text.lower() in ("", "auto") else float(text)
        if name == "center" and section == "phantom":
            return None if text.lower() in ("", "auto") else tuple(float(x) for x in text.split())
        if isinstance(default, bool):
            if text.lower() in ("1", "yes", "true", "on"):
                return True
            if text.lower() in ("0", "no", "false", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = int if name == "dims" else float
            vals = tuple(kind(x) for x in text.replace(",", " ").split())
            if len(vals) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return vals
        return text
    except ValueError as exc:
        raise ConfigError(f"[{section}] {name}: {exc}") from None


_SECTIONS = {
    "clic": ClicParams,
    "registration": RegParams,
    "simple": SimpleParams,
    "levelset": CvParams,
    "phantom": PhantomParams,
}


def _params_from(parser, section: str, cls):
    defaults = cls()
    if not parser.has_section(section):
        return defaults
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, text in parser.items(section):
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        kwargs[key] = _coerce(section, key, getattr(defaults, key), text)
    try:
        return cls(**{**{f.name: getattr(defaults, f.name) for f in fields(cls)}, **kwargs})
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str, base_dir: Path | None = None, check_paths: bool = True) -> PipelineConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    allowed = {"paths", "run", *_SECTIONS}
    for s in parser.sections():
        if s not in allowed:
            raise ConfigError(f"unknown section [{s}]")

    path_kwargs = {}
    if parser.has_section("paths"):
        known = {f.name for f in fields(Paths)}
        for key, value in parser.items("paths"):
            if key not in known:
                raise ConfigError(f"[paths] unknown key {key!r}")
            value = value.strip()
            if value and base_dir is not None and not Path(value).is_absolute():
                value = str(base_dir / value)
            path_kwargs[key] = value
    paths = Paths(**path_kwargs)

    run = dict(parser.items("run")) if parser.has_section("run") else {}
    unknown = set(run) - {"seed", "selection", "leave_one_out", "n_cases"}
    if unknown:
        raise ConfigError(f"[run] unknown keys {sorted(unknown)}")
    seed = _coerce("run", "seed", 0, run.get("seed", "0"))
    selection = run.get("selection", "simple").strip().lower()
    if selection not in SELECTION_MODES:
        raise ConfigError(f"[run] selection must be one of {SELECTION_MODES}, got {selection!r}")
    loo = _coerce("run", "leave_one_out", False, run.get("leave_one_out", "no"))
    n_cases = _coerce("run", "n_cases", 12, run.get("n_cases", "12"))
    if n_cases < 1:
        raise ConfigError("[run] n_cases must be >= 1")

    reg = _params_from(parser, "registration", RegParams)
    if not parser.has_option("registration", "seed"):
        reg = replace(reg, seed=seed)
    cfg = PipelineConfig(
        paths=paths,
        seed=seed,
        selection=selection,
        leave_one_out=loo,
        n_cases=n_cases,
        clic=_params_from(parser, "clic", ClicParams),
        registration=reg,
        simple=_params_from(parser, "simple", SimpleParams),
        levelset=_params_from(parser, "levelset", CvParams),
        phantom=_params_from(parser, "phantom", PhantomParams),
        source=text,
    )
    if check_paths:
        for name in ("target_image", "target_label", "atlas_image_dir", "atlas_label_dir"):
            value = getattr(paths, name)
            if value and not Path(value).exists():
                raise ConfigError(f"[paths] {name} does not exist: {value}")
    return cfg


def load_config(path, check_paths: bool = True) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent, check_paths=check_paths)


def config_text(cfg: PipelineConfig) -> str:
    """Canonical, fully expanded rendering of the configuration."""
    lines = ["[paths]"]
    for f in fields(Paths):
        lines.append(f"{f.name} = {getattr(cfg.paths, f.name)}")
    lines += ["", "[run]", f"seed = {cfg.seed}", f"selection = {cfg.selection}",
              f"leave_one_out = {_format_value(cfg.leave_one_out)}", f"n_cases = {cfg.n_cases}"]
    for section in _SECTIONS:
        params = getattr(cfg, section)
        lines += ["", f"[{section}]"]
        for f in fields(params):
            lines.append(f"{f.name} = {_format_value(getattr(params, f.name))}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: PipelineConfig) -> str:
    return hashlib.sha256(config_text(cfg).encode()).hexdigest()
