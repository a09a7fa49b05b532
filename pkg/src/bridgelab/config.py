"""Run configuration: an INI file with one section per component.

Schema (every key optional; defaults shown)::

    [run]
    seed = 0
    out = runs
    variant = nadb              ; i2sb | nadb | i2sb-mean | nadb-nomean

    [task]
    name = blur                 ; gauss | blur | quantize | clusters
    n_train = 8192
    n_test = 512
    ; any other key is passed to the task factory, e.g. kernel = uniform3

    [bridge]
    kind = nadb                 ; overridden by the variant's interpolant
    alpha = 0.4
    k = 0.75
    beta.shape = triangular
    beta.total_variance = 1.0
    t_min = 1e-4

    [train]                     ; bridge regressor
    steps = 1000
    lr = 1e-4
    batch_size = 128
    hidden = 128
    depth = 2
    time_embed_dim = 16
    activation = silu
    time_bins = 20

    [mean]                      ; mean network, same keys as [train] plus
    checkpoint =                ; default <out>/mean.brlb

    [sampler]
    nfe = 10
    d =                         ; empty: (1 - alpha) / (2 - alpha)
    w_rule = ratio              ; ratio | deterministic | constant
    w_const = 1.0
    spacing = uniform

    [diagnose]
    t_low = 1e-3
    points = 10
    samples_per_t = 256
    w2_samples = 100000

    [sweep]
    alphas = 0.3, 0.4, 0.5
"""

from __future__ import annotations

import ast
import configparser
import hashlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .interpolant import NADB, ScheduleSpec
from .tasks import make_task
from .training import VARIANTS, TrainConfig, variant_kind

SECTIONS = ("run", "task", "bridge", "train", "mean", "sampler", "diagnose", "sweep")
_TRAIN_KEYS = ("steps", "lr", "batch_size", "hidden", "depth", "time_embed_dim",
               "activation", "time_bins")


@dataclass
class SamplerSettings:
    nfe: int = 10
    d: float | None = None
    w_rule: str = "ratio"
    w_const: float = 1.0
    spacing: str = "uniform"


@dataclass
class DiagnoseSettings:
    t_low: float = 1e-3
    points: int = 10
    samples_per_t: int = 256
    w2_samples: int = 100_000


@dataclass
class RunConfig:
    seed: int = 0
    out: Path = Path("runs")
    variant: str = "nadb"
    task: str = "blur"
    task_params: dict = field(default_factory=dict)
    n_train: int = 8192
    n_test: int = 512
    schedule: ScheduleSpec = field(default_factory=lambda: ScheduleSpec(NADB))
    train: TrainConfig = field(default_factory=TrainConfig)
    mean: TrainConfig = field(default_factory=TrainConfig)
    mean_checkpoint: Path | None = None
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    diagnose: DiagnoseSettings = field(default_factory=DiagnoseSettings)
    alphas: tuple[float, ...] = (0.3, 0.4, 0.5)

    def __post_init__(self):
        variant_kind(self.variant)
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be positive")
        if self.sampler.nfe < 1:
            raise ConfigError("nfe must be at least 1")
        try:
            make_task(self.task, **self.task_params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad [task] section: {exc}") from None

    @property
    def uses_mean(self) -> bool:
        return variant_kind(self.variant)[1]

    @property
    def bridge_spec(self) -> ScheduleSpec:
        return replace(self.schedule, kind=variant_kind(self.variant)[0])

    def mean_path(self) -> Path:
        return self.mean_checkpoint or self.out / "mean.brlb"

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed, bridge=self.bridge_spec,
                       t_min=self.schedule.t_min, use_mean_network=self.uses_mean)

    def mean_config(self) -> TrainConfig:
        return replace(self.mean, seed=self.seed)

    def with_alpha(self, alpha: float) -> "RunConfig":
        return replace(self, schedule=replace(self.schedule, alpha=alpha))

    def canonical(self) -> str:
        """Stable text form of everything that affects results except seed and out."""
        return render(self, include_run=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def hash8(self) -> str:
        return self.config_hash[:8]


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _get(section, key, conv, default):
    if section is None or key not in section or section[key].strip() == "":
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a valid {conv.__name__}") from None


def parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(a) for a in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot read a list of numbers from {text!r}") from None


def schedule_from_section(section) -> ScheduleSpec:
    d = ScheduleSpec(NADB)
    return ScheduleSpec(
        kind=_get(section, "kind", str, d.kind),
        alpha=_get(section, "alpha", float, d.alpha),
        k=_get(section, "k", float, d.k),
        beta_shape=_get(section, "beta.shape", str, d.beta_shape),
        total_variance=_get(section, "beta.total_variance", float, d.total_variance),
        t_min=_get(section, "t_min", float, d.t_min),
    )


def schedule_to_section(spec: ScheduleSpec) -> dict[str, str]:
    if spec.beta_table is not None:
        raise ConfigError("explicit beta tables cannot be written to a config file")
    return {"kind": spec.kind, "alpha": repr(spec.alpha), "k": repr(spec.k),
            "beta.shape": spec.beta_shape, "beta.total_variance": repr(spec.total_variance),
            "t_min": repr(spec.t_min)}


def _train_from_section(section, base: TrainConfig) -> TrainConfig:
    convs = {"steps": int, "lr": float, "batch_size": int, "hidden": int, "depth": int,
             "time_embed_dim": int, "activation": str, "time_bins": int}
    return replace(base, **{k: _get(section, k, convs[k], getattr(base, k)) for k in _TRAIN_KEYS})


def _check_keys(parser: configparser.ConfigParser):
    known = {
        "run": {"seed", "out", "variant"},
        "bridge": {"kind", "alpha", "k", "beta.shape", "beta.total_variance", "t_min"},
        "train": set(_TRAIN_KEYS),
        "mean": set(_TRAIN_KEYS) | {"checkpoint"},
        "sampler": {"nfe", "d", "w_rule", "w_const", "spacing"},
        "diagnose": {"t_low", "points", "samples_per_t", "w2_samples"},
        "sweep": {"alphas"},
    }
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]; expected {', '.join(SECTIONS)}")
        if name in known:
            extra = set(parser[name]) - known[name]
            if extra:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")


def from_parser(parser: configparser.ConfigParser) -> RunConfig:
    _check_keys(parser)
    sec = {name: parser[name] if parser.has_section(name) else None for name in SECTIONS}
    task = sec["task"]
    task_params = {}
    if task is not None:
        task_params = {k: _literal(v) for k, v in task.items()
                       if k not in ("name", "n_train", "n_test")}
    run = sec["run"]
    mean_train = _train_from_section(sec["mean"], TrainConfig())
    ckpt = _get(sec["mean"], "checkpoint", str, None)
    sampler = sec["sampler"]
    diag = sec["diagnose"]
    try:
        return RunConfig(
            seed=_get(run, "seed", int, 0),
            out=Path(_get(run, "out", str, "runs")),
            variant=_get(run, "variant", str, None) or _get(sec["bridge"], "kind", str, NADB),
            task=_get(task, "name", str, "blur"),
            task_params=task_params,
            n_train=_get(task, "n_train", int, 8192),
            n_test=_get(task, "n_test", int, 512),
            schedule=schedule_from_section(sec["bridge"]),
            train=_train_from_section(sec["train"], TrainConfig()),
            mean=mean_train,
            mean_checkpoint=Path(ckpt) if ckpt else None,
            sampler=SamplerSettings(
                nfe=_get(sampler, "nfe", int, 10),
                d=_get(sampler, "d", float, None),
                w_rule=_get(sampler, "w_rule", str, "ratio"),
                w_const=_get(sampler, "w_const", float, 1.0),
                spacing=_get(sampler, "spacing", str, "uniform"),
            ),
            diagnose=DiagnoseSettings(
                t_low=_get(diag, "t_low", float, 1e-3),
                points=_get(diag, "points", int, 10),
                samples_per_t=_get(diag, "samples_per_t", int, 256),
                w2_samples=_get(diag, "w2_samples", int, 100_000),
            ),
            alphas=_get(sec["sweep"], "alphas", parse_floats, (0.3, 0.4, 0.5)),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None) -> RunConfig:
    """Read a config file; ``None`` gives the all-defaults configuration."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        path = Path(path)
        try:
            with path.open(encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return from_parser(parser)


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def render(config: RunConfig, include_run: bool = True) -> str:
    """Serialise a config back to INI text (deterministic key order).

    With ``include_run=False`` the seed, output directory and checkpoint path
    are left out; that form feeds the config hash.
    """
    sections: dict[str, dict[str, str]] = {}
    run = {"variant": config.variant}
    if include_run:
        run.update(seed=str(config.seed), out=str(config.out))
    sections["run"] = run
    sections["task"] = {"name": config.task, "n_train": str(config.n_train),
                        "n_test": str(config.n_test),
                        **{k: repr(v) for k, v in config.task_params.items()}}
    sections["bridge"] = schedule_to_section(config.schedule)
    for name, tc in (("train", config.train), ("mean", config.mean)):
        sections[name] = {k: _fmt(getattr(tc, k)) for k in _TRAIN_KEYS}
    if include_run and config.mean_checkpoint is not None:
        sections["mean"]["checkpoint"] = str(config.mean_checkpoint)
    sections["sampler"] = {k: _fmt(v) for k, v in asdict(config.sampler).items()}
    sections["diagnose"] = {k: _fmt(v) for k, v in asdict(config.diagnose).items()}
    sections["sweep"] = {"alphas": ", ".join(repr(a) for a in config.alphas)}
    lines = []
    for name, body in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in sorted(body.items()))
    return "\n".join(lines) + "\n"


__all__ = ["RunConfig", "SamplerSettings", "DiagnoseSettings", "load_config", "render",
           "schedule_from_section", "schedule_to_section", "parse_floats", "VARIANTS"]
