"""Pipeline configuration: an INI file with one section per stage.

Every field can be overridden on the command line as
``--<section>-<field>`` (underscores become hyphens), e.g.
``--hmc-step-size 0.05``. The ``[run]`` fields use the short global
flags ``--seed``, ``--out-dir``, ``--threads`` and ``--allow-nonconverged``.
Relative paths in a config file are resolved against the file's directory.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields

from .bayes import PriorConfig
from .errors import InputError
from .fgn import EmConfig, FgnConfig
from .hmc import HmcConfig


@dataclass
class InputsSection:
    up: str = ""
    down: str = ""
    metadata: str = ""
    gmt: str = ""
    refseq: str = ""
    edges: str = ""
    counts: str = ""
    count_metadata: str = ""


@dataclass
class PreprocessSection:
    cutoff: float = 1.5
    transform: str = "log2"
    delimiter: str = "tab"


@dataclass
class NetworkSection:
    threshold: float = 0.8


@dataclass
class FgnSection:
    states: int = 2
    coupling: float = 1.0
    damping: float = 0.5
    max_iter: int = 100
    tol: float = 1e-6
    reestimate: str = "beliefs"
    outer_max_iter: int = 20
    outer_tol: float = 1e-6
    min_separation: float = 1.0


@dataclass
class GmmSection:
    max_iter: int = 500
    tol: float = 1e-8
    var_floor: float = 1e-6


@dataclass
class PriorSection:
    mu_alpha_loc: float = 0.0
    mu_alpha_scale: float = 5.0
    sigma_alpha_scale: float = 1.0
    sigma_beta_scale: float = 1.0
    dispersion_scale: float = 5.0
    depth_scale: float = 1e-4


@dataclass
class HmcSection:
    step_size: float = 0.1
    num_leapfrog: int = 16
    warmup: int = 1000
    samples: int = 1000
    chains: int = 4
    target_accept: float = 0.8
    adapt: bool = True
    adapt_mass: bool = False
    max_delta_h: float = 1000.0
    init_radius: float = 0.5


@dataclass
class FitSection:
    rhat_threshold: float = 1.1
    pseudocount_base: float = 100.0
    pseudocount_depth: float = 1e6


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "out"
    threads: int = 1
    allow_nonconverged: bool = False


@dataclass
class PipelineConfig:
    inputs: InputsSection = field(default_factory=InputsSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    fgn: FgnSection = field(default_factory=FgnSection)
    gmm: GmmSection = field(default_factory=GmmSection)
    prior: PriorSection = field(default_factory=PriorSection)
    hmc: HmcSection = field(default_factory=HmcSection)
    fit: FitSection = field(default_factory=FitSection)
    run: RunSection = field(default_factory=RunSection)

    # -- conversions to the library's config objects --

    @property
    def delimiter(self):
        return "\t" if self.preprocess.delimiter == "tab" else self.preprocess.delimiter

    def em_config(self):
        return EmConfig(self.gmm.max_iter, self.gmm.tol, self.run.seed, self.gmm.var_floor)

    def fgn_config(self):
        f = self.fgn
        return FgnConfig(
            coupling=f.coupling, damping=f.damping, max_iter=f.max_iter, tol=f.tol,
            transform=self.preprocess.transform, reestimate=f.reestimate,
            outer_max_iter=f.outer_max_iter, outer_tol=f.outer_tol,
            min_separation=f.min_separation, em=self.em_config(),
        )

    def prior_config(self):
        return PriorConfig(**dataclasses.asdict(self.prior))

    def hmc_config(self):
        return HmcConfig(
            **dataclasses.asdict(self.hmc), seed=self.run.seed, threads=self.run.threads
        )

    def as_dict(self):
        return dataclasses.asdict(self)


SECTIONS = [f.name for f in fields(PipelineConfig)]


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def convert(value, typ):
    if typ in (bool, "bool"):
        return _parse_bool(value)
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return str(value)


def iter_fields():
    """Yield ``(section, field_name, type)`` for every config field."""
    for sec in fields(PipelineConfig):
        for f in fields(sec.default_factory):
            yield sec.name, f.name, f.type


def load_config(path=None):
    """Read an INI config; unknown sections or keys are input errors."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))
    types = {(s, n): t for s, n, t in iter_fields()}
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise InputError(f"unknown config section [{sec}]")
        for key, raw in parser.items(sec):
            if (sec, key) not in types:
                raise InputError(f"unknown config key {sec}.{key}")
            try:
                val = convert(raw, types[(sec, key)])
            except ValueError as exc:
                raise InputError(f"bad value for {sec}.{key}: {exc}") from exc
            if sec == "inputs" and val:
                val = os.path.normpath(os.path.join(base, val))
            if sec == "run" and key == "out_dir":
                val = os.path.normpath(os.path.join(base, val))
            setattr(getattr(cfg, sec), key, val)
    return cfg


def flag_name(section, name):
    if section == "run":
        return "--" + name.replace("_", "-")
    return f"--{section}-{name.replace('_', '-')}"


def apply_overrides(cfg, overrides):
    """Apply ``{(section, field): raw_value}`` overrides; path values resolve against the CWD."""
    types = {(s, n): t for s, n, t in iter_fields()}
    for (sec, key), raw in overrides.items():
        try:
            val = convert(raw, types[(sec, key)])
        except ValueError as exc:
            raise InputError(f"bad value for {flag_name(sec, key)}: {exc}") from exc
        if (sec == "inputs" and val) or (sec, key) == ("run", "out_dir"):
            val = os.path.abspath(val)
        setattr(getattr(cfg, sec), key, val)
    return cfg


def write_config(cfg, path):
    parser = configparser.ConfigParser(interpolation=None)
    for sec, values in cfg.as_dict().items():
        parser[sec] = {k: str(v) for k, v in values.items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
