"""Experiment grid over methods, privacy budgets and seeds on the synthetic oracle."""
import configparser
import logging
import os
import time
import typing
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Literal, Optional, Tuple, Union

import pandas as pd
import pydantic
from tqdm import tqdm

from .base import ArrayRecord, FeatureMatrix, PrivacyBudget, Real, SeededRng, standard_model_config
from .dre import DreConfig, compute_weights, sample_dre, superclass_weight, train_dp_dre, uniform_public_model
from .enums import Method, ReportFormat
from .exceptions import ConfigurationError, ContractViolation, FeatureIOError, PrivFeatError
from .gan import GanConfig, LatentGan, pretrain_public_gan, sample_gan, train_dp_latent_gan
from .metrics import MetricsConfig, MetricsReport, evaluate
from .mge import MgeConfig, fit_dp_mge, sample_mge
from .oracle import OracleConfig, gen_synthetic, split_private
from .utils import config_hash, format_number, split_list

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "method",
    "eps",
    "seed",
    "fid",
    "precision",
    "recall",
    "ndb_count",
    "ndb_fraction",
    "superclass_mass",
    "wall_ms",
)

DEFAULT_EPSILONS = (float("inf"), 10.0, 3.0, 1.0, 0.1)


class PrivacyConfig(pydantic.BaseModel):
    model_config = standard_model_config

    epsilons: Tuple[Real, ...] = DEFAULT_EPSILONS
    delta: float = pydantic.Field(1e-5, gt=0.0, lt=1.0)
    # grid epsilons at or above this run without noise, like inf
    non_private_at: Real = pydantic.Field(1e6, gt=0.0)

    def budget(self, eps: float) -> PrivacyBudget:
        if eps >= self.non_private_at:
            return PrivacyBudget.non_private(self.delta)
        return PrivacyBudget(epsilon=eps, delta=self.delta)

    @pydantic.field_validator("epsilons")
    def epsilons_must_be_positive(cls, v):
        if not v:
            raise ConfigurationError("[privacy] epsilons is empty")
        if any(not e > 0 for e in v):
            raise ConfigurationError("[privacy] epsilons must be positive or inf")
        return v


class RunConfig(pydantic.BaseModel):
    model_config = standard_model_config

    methods: Tuple[Method, ...] = tuple(Method)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    master_seed: int = pydantic.Field(0, ge=0)
    n_eval: int = pydantic.Field(2000, ge=2)
    parallel: int = pydantic.Field(1, ge=1)
    timing: bool = False

    @pydantic.field_validator("methods", "seeds")
    def must_be_nonempty(cls, v, info):
        if not v:
            raise ConfigurationError("[run] {0} is empty".format(info.field_name))
        return v


class ExperimentConfig(pydantic.BaseModel):
    model_config = standard_model_config

    oracle: OracleConfig = OracleConfig()
    privacy: PrivacyConfig = PrivacyConfig()
    dre: DreConfig = DreConfig()
    mge: MgeConfig = MgeConfig()
    gan: GanConfig = GanConfig()
    metrics: MetricsConfig = MetricsConfig()
    run: RunConfig = RunConfig()


def _is_sequence(annotation) -> bool:
    if typing.get_origin(annotation) is Union:
        return any(_is_sequence(a) for a in typing.get_args(annotation) if a is not type(None))
    return typing.get_origin(annotation) in (tuple, list)


def _section_values(section: str, model_cls, items: Dict[str, str]) -> Dict[str, object]:
    values = {}
    for key, raw in items.items():
        field = model_cls.model_fields.get(key)
        if field is None:
            raise ConfigurationError("[{0}] unknown key '{1}'".format(section, key))
        if raw.strip().lower() == "none":
            values[key] = None
        elif _is_sequence(field.annotation):
            values[key] = split_list(raw)
        else:
            values[key] = raw.strip()
    return values


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Reads INI text with sections named after the ExperimentConfig fields."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigurationError("{0}: {1}".format(source, err)) from err

    fields = ExperimentConfig.model_fields
    sections = {}
    for section in parser.sections():
        if section not in fields:
            raise ConfigurationError("{0}: unknown section [{1}]".format(source, section))
        model_cls = fields[section].annotation
        values = _section_values(section, model_cls, dict(parser.items(section)))
        try:
            sections[section] = model_cls(**values)
        except pydantic.ValidationError as err:
            first = err.errors()[0]
            where = ".".join(str(x) for x in first["loc"])
            raise ConfigurationError("[{0}] {1}: {2}".format(section, where, first["msg"])) from err
    return ExperimentConfig(**sections)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as err:
        raise FeatureIOError(path, err.strerror or str(err)) from err
    return parse_config(text, source=str(path))


class ResultRow(ArrayRecord):
    method: Method
    eps: Real
    eps_target: Real
    seed: int
    metrics: Optional[MetricsReport] = None
    superclass_mass: Optional[float] = None
    wall_ms: Optional[float] = None
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def csv_record(self) -> Dict[str, object]:
        m = self.metrics or MetricsReport()
        return {
            "method": self.method.value,
            "eps": format_number(self.eps, 6),
            "seed": self.seed,
            "fid": m.fid,
            "precision": m.precision,
            "recall": m.recall,
            "ndb_count": m.ndb_count,
            "ndb_fraction": m.ndb_fraction,
            "superclass_mass": self.superclass_mass,
            "wall_ms": self.wall_ms,
        }


class ResultTable(ArrayRecord):
    kind: Literal["results"] = "results"
    rows: List[ResultRow] = []
    config_hash: str = ""

    @property
    def failed(self) -> List[ResultRow]:
        return [r for r in self.rows if r.failed]

    def to_frame(self) -> pd.DataFrame:
        """One line per row with the CSV columns; per-bin and curve detail is dropped."""
        return pd.DataFrame(
            [r.csv_record() for r in self.rows],
            columns=list(CSV_COLUMNS),
            dtype=object,
        )


class _Cell(typing.NamedTuple):
    index: int
    method: Method
    eps: float
    seed: int


class _SeedData(typing.NamedTuple):
    pub: FeatureMatrix
    train: FeatureMatrix
    held_out: FeatureMatrix
    pretrained: Optional[LatentGan]
    pretrain_error: Optional[str] = None


def _prepare_seed(cfg: ExperimentConfig, master: SeededRng, seed: int) -> _SeedData:
    rng = master.split(0, seed)
    pub, priv = gen_synthetic(cfg.oracle, rng.split(0))
    train, held_out = split_private(priv, rng.split(1))
    pretrained, error = None, None
    if Method.DP_GAN_FT in cfg.run.methods:
        try:
            pretrained = pretrain_public_gan(pub, cfg.gan, rng.split(2))
        except (PrivFeatError, ArithmeticError) as err:
            error = "{0}: {1}".format(type(err).__name__, err)
            log.warning("public GAN pretraining failed for seed {0}: {1}".format(seed, error))
    return _SeedData(pub=pub, train=train, held_out=held_out, pretrained=pretrained, pretrain_error=error)


def _fit_and_sample(cfg: ExperimentConfig, cell: _Cell, data: _SeedData, rng: SeededRng):
    """Returns (samples, achieved epsilon, superclass mass or None)."""
    budget = cfg.privacy.budget(cell.eps)
    n_eval = cfg.run.n_eval
    private_modes = set(cfg.oracle.private_modes)

    if cell.method == Method.DP_MGE:
        model = fit_dp_mge(data.train, budget, rng.split(0), cfg.mge.variance_floor)
        return sample_mge(model, n_eval, rng.split(1)), model.eps, None

    if cell.method in (Method.DP_DRE, Method.UNIFORM_PUBLIC):
        if cell.method == Method.DP_DRE:
            disc = train_dp_dre(data.train, data.pub, budget, cfg.dre, rng.split(0))
            model = compute_weights(disc, data.pub)
        else:
            model = uniform_public_model(data.pub)
        samples = sample_dre(model, data.pub, n_eval, rng.split(1))
        mass = superclass_weight(model, data.pub.labels, private_modes)
        return samples, model.eps, mass

    init = None
    if cell.method == Method.DP_GAN_FT:
        if data.pretrained is None:
            raise ContractViolation("no pretrained public GAN ({0})".format(data.pretrain_error))
        init = data.pretrained
    gan = train_dp_latent_gan(data.train, init, budget, cfg.gan, rng.split(0))
    return sample_gan(gan, n_eval, rng.split(1)), gan.eps, None


def _run_cell(cfg: ExperimentConfig, cell: _Cell, data: _SeedData, rng: SeededRng) -> ResultRow:
    started = time.perf_counter()
    try:
        samples, eps, mass = _fit_and_sample(cfg, cell, data, rng)
        report = evaluate(data.held_out, samples, cfg.metrics, rng.split(2))
    except (PrivFeatError, ValueError, ArithmeticError) as err:
        log.warning("cell {0} ({1}, eps={2}, seed={3}) failed: {4}".format(
            cell.index, cell.method.value, format_number(cell.eps, 6), cell.seed, err))
        return ResultRow(
            method=cell.method,
            eps=cell.eps,
            eps_target=cell.eps,
            seed=cell.seed,
            error="{0}: {1}".format(type(err).__name__, err),
        )
    wall_ms = (time.perf_counter() - started) * 1000.0 if cfg.run.timing else None
    return ResultRow(
        method=cell.method,
        eps=eps,
        eps_target=cell.eps,
        seed=cell.seed,
        metrics=report,
        superclass_mass=mass,
        wall_ms=wall_ms,
    )


def grid_cells(cfg: ExperimentConfig) -> List[_Cell]:
    cells = []
    for seed in cfg.run.seeds:
        for method in cfg.run.methods:
            for eps in cfg.privacy.epsilons:
                cells.append(_Cell(len(cells), method, eps, seed))
    return cells


def run_experiment(cfg: ExperimentConfig, parallel: Optional[int] = None, progress: bool = False) -> ResultTable:
    """Runs every (method, eps, seed) cell; failed cells are kept with their error.

    Each cell draws from its own stream keyed by the cell index, so the table
    does not depend on `parallel`.
    """
    master = SeededRng(seed=cfg.run.master_seed)
    workers = parallel or cfg.run.parallel
    data = {seed: _prepare_seed(cfg, master, seed) for seed in dict.fromkeys(cfg.run.seeds)}
    cells = grid_cells(cfg)
    log.info("running {0} cells on {1} worker(s)".format(len(cells), workers))

    def work(cell: _Cell) -> ResultRow:
        return _run_cell(cfg, cell, data[cell.seed], master.split(1, cell.index))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(tqdm(pool.map(work, cells), total=len(cells), disable=not progress, desc="cells"))

    table = ResultTable(rows=rows, config_hash=config_hash(cfg))
    if table.failed:
        log.warning("{0} of {1} cells failed".format(len(table.failed), len(rows)))
    return table


def emit_report(table: ResultTable, path, fmt: Union[ReportFormat, str] = ReportFormat.JSON) -> None:
    """Writes the full nested table as JSON, or its flat projection as CSV."""
    fmt = ReportFormat(fmt)
    try:
        if fmt == ReportFormat.JSON:
            with open(path, "w", encoding="utf-8") as f:
                f.write(table.model_dump_json(indent=2))
                f.write("\n")
        else:
            table.to_frame().to_csv(path, index=False, na_rep="", lineterminator="\n")
    except OSError as err:
        raise FeatureIOError(path, err.strerror or str(err)) from err
    log.debug("wrote {0} rows to {1}".format(len(table.rows), path))


def emit_reports(table: ResultTable, out_dir) -> Tuple[str, str]:
    """Writes results.json and results.csv under out_dir."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as err:
        raise FeatureIOError(out_dir, err.strerror or str(err)) from err
    json_path = os.path.join(out_dir, "results.json")
    csv_path = os.path.join(out_dir, "results.csv")
    emit_report(table, json_path, ReportFormat.JSON)
    emit_report(table, csv_path, ReportFormat.CSV)
    return json_path, csv_path
