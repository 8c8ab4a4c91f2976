#!/usr/bin/env python3
"""
Command line interface of the heralded Fock-state toolkit.

Every subcommand writes plot-ready CSV and/or JSON into the output directory.
Parameters come from flags, a flat KEY=VALUE config file (``--config``) and,
for ``sweep``, a named sweep preset, in that order of precedence.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from config import Config
from utils.analysis import (
    SpectrumTemplate,
    feasibility,
    fit_parameters,
    fitted_curves,
    max_herald_probability,
    sweep_gain,
    tradeoff_curve,
)
from utils.data_processor import DataProcessor
from utils.distributions import LossModel, single_mode_max_probability
from utils.errors import ConfigError, FockError
from utils.report_writer import ReportWriter
from utils.tes_ingest import MixtureFit, allan_frame, assign_counts, fit_mixture

logger = logging.getLogger("fock")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 4


def _float_list(value) -> List[float]:
    if isinstance(value, str):
        value = [v for v in value.replace(";", ",").split(",") if v.strip()]
    return [float(v) for v in value]


def _int_list(value) -> List[int]:
    items = _float_list(value)
    if any(v != int(v) for v in items):
        raise ValueError(f"expected integers, got {value!r}")
    return [int(v) for v in items]


def _gain_range(value) -> np.ndarray:
    parts = _float_list(value)
    if len(parts) != 3 or parts[2] != int(parts[2]):
        raise ValueError(f"gain range must be 'start,stop,points', got {value!r}")
    return np.linspace(parts[0], parts[1], int(parts[2]))


class Options:
    """Flag values backed by a config file and a preset"""

    def __init__(self, args: argparse.Namespace, file_values: Dict[str, str], preset: Dict[str, Any]):
        self.args = args
        self.file_values = file_values
        self.preset = preset

    def get(self, name: str, cast: Callable, default=None, use_preset: bool = True):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.file_values.get(name.upper())
        if (value is None or value == "") and use_preset:
            value = self.preset.get(name)
        if value is None or value == "":
            return default
        try:
            return cast(value)
        except ValueError as e:
            raise ConfigError(f"invalid value for {name}: {value!r} ({e})") from e


@dataclass
class RunConfig:
    """Validated parameters shared by all subcommands"""

    mu: Optional[float] = None
    schmidt_number: Optional[float] = None
    equal_modes: Optional[int] = None
    k_max: int = Config.K_MAX
    eta_signal: float = 1.0
    eta_idler: Optional[float] = None
    gains: Optional[List[float]] = None
    n: Optional[List[int]] = None
    xtol: float = Config.GAIN_XTOL
    seed: int = Config.SEED
    threads: int = Config.THREADS
    output_dir: str = Config.OUTPUT_DIR
    output: Optional[str] = None

    def __post_init__(self):
        given = [name for name in ("mu", "schmidt_number", "equal_modes") if getattr(self, name) is not None]
        if len(given) > 1:
            raise ConfigError(f"spectrum is over-specified: give only one of {given}")
        if self.mu is not None and not 0.0 <= self.mu < 1.0:
            raise ConfigError(f"mu must lie in [0, 1), got {self.mu}")
        if self.schmidt_number is not None and not self.schmidt_number >= 1.0:
            raise ConfigError(f"Schmidt number must be >= 1, got {self.schmidt_number}")
        if self.equal_modes is not None and self.equal_modes < 1:
            raise ConfigError(f"equal_modes must be >= 1, got {self.equal_modes}")
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")
        for name in ("eta_signal", "eta_idler"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.gains is not None:
            gains = np.asarray(self.gains, dtype=float)
            if gains.size == 0:
                raise ConfigError("the gain grid is empty")
            if np.any(gains < 0.0) or np.any(np.diff(gains) <= 0.0):
                raise ConfigError("gains must be >= 0 and strictly increasing")
            self.gains = gains.tolist()
        if self.n is not None:
            if not self.n or any(v < 0 for v in self.n):
                raise ConfigError("photon numbers must be a non-empty list of integers >= 0")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    @classmethod
    def from_options(cls, options: Options) -> "RunConfig":
        gains = options.get("gains", _float_list)
        if gains is None:
            gain_range = options.get("gain_range", _gain_range)
            gains = None if gain_range is None else list(gain_range)
        # a spectrum given by flag or file replaces the preset's
        spectrum = {
            "mu": options.get("mu", float, use_preset=False),
            "schmidt_number": options.get("schmidt_number", float, use_preset=False),
            "equal_modes": options.get("equal_modes", int, use_preset=False),
        }
        if all(v is None for v in spectrum.values()):
            spectrum = {
                "mu": options.get("mu", float),
                "schmidt_number": options.get("schmidt_number", float),
                "equal_modes": options.get("equal_modes", int),
            }
        return cls(
            **spectrum,
            k_max=options.get("k_max", int, Config.K_MAX),
            eta_signal=options.get("eta_signal", float, 1.0),
            eta_idler=options.get("eta_idler", float),
            gains=gains,
            n=options.get("n", _int_list),
            xtol=options.get("xtol", float, Config.GAIN_XTOL),
            seed=options.get("seed", int, Config.SEED),
            threads=options.get("threads", int, Config.THREADS),
            output_dir=options.get("output_dir", str, Config.OUTPUT_DIR),
            output=options.get("output", str),
        )

    def template(self) -> SpectrumTemplate:
        if self.equal_modes is not None:
            return SpectrumTemplate.equal(self.equal_modes)
        if self.schmidt_number is not None:
            return SpectrumTemplate.from_schmidt_number(self.schmidt_number, self.k_max)
        if self.mu is not None:
            return SpectrumTemplate(mode_decay=self.mu, k_max=self.k_max)
        return SpectrumTemplate.single_mode()

    def loss(self, eta_idler_default: float = 1.0) -> LossModel:
        eta_idler = eta_idler_default if self.eta_idler is None else self.eta_idler
        return LossModel(eta_signal=self.eta_signal, eta_idler=eta_idler)

    def to_dict(self) -> Dict:
        return asdict(self)


def _metadata(command: str, config: RunConfig, **parameters) -> Dict:
    return {
        "command": command,
        "parameters": {**config.to_dict(), **parameters},
        "tolerances": {
            "truncation_eps": Config.TRUNCATION_EPS,
            "degeneracy_threshold": Config.DEGENERACY_THRESHOLD,
            "vacuum_cutoff": Config.VACUUM_CUTOFF,
            "p_min": Config.P_MIN,
            "gain_xtol": config.xtol,
        },
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_sweep(options: Options) -> int:
    config = RunConfig.from_options(options)
    if config.gains is None:
        raise ConfigError("sweep needs --gains or --gain-range")
    n_list = config.n or [1, 2, 5]

    result = sweep_gain(config.template(), config.loss(), config.gains, n_list, workers=config.threads)
    maxima = result.maxima()

    writer = ReportWriter(config.output_dir)
    stem = config.output or options.get("preset", str, "sweep")
    csv_path = writer.write_csv(result.to_frame(), stem)
    json_path = writer.write_json(
        {"maxima": maxima.to_dict(orient="records")},
        stem,
        metadata=_metadata("sweep", config, n=list(n_list)),
    )

    for row in maxima.itertuples():
        print(f"📈 n={row.n}: max p_n = {row.p_n:.6g} at B = {row.B:.4f}")
    print(f"✅ Sweep written: {csv_path}, {json_path}")
    return EXIT_OK


def cmd_max_prob(options: Options) -> int:
    config = RunConfig.from_options(options)
    template, loss = config.template(), config.loss()
    rows = []
    for n in config.n or [1, 2, 5]:
        if n < 1:
            raise ConfigError(f"max-prob needs n >= 1, got {n}")
        optimum = max_herald_probability(template, loss, n, xtol=config.xtol)
        rows.append(
            {
                "n": n,
                "B": optimum.gain,
                "p_max": optimum.probability,
                "p_max_single_mode": single_mode_max_probability(n),
            }
        )
        print(f"🎯 n={n}: p* = {optimum.probability:.10f} at B* = {optimum.gain:.8f}")

    writer = ReportWriter(config.output_dir)
    path = writer.write_json({"optima": rows}, config.output or "max_prob", metadata=_metadata("max-prob", config))
    print(f"✅ Optima written: {path}")
    return EXIT_OK


def cmd_tradeoff(options: Options) -> int:
    config = RunConfig.from_options(options)
    template, loss = config.template(), config.loss()
    kind = options.get("kind", str, "single_mode")
    targets = options.get("targets", _float_list)
    points = options.get("points", int, 20)
    if points < 1:
        raise ConfigError(f"points must be >= 1, got {points}")

    frames = []
    for n in config.n or [1]:
        if n < 1:
            raise ConfigError(f"tradeoff needs n >= 1, got {n}")
        if targets is None:
            optimum = max_herald_probability(template, loss, n, xtol=config.xtol)
            n_targets = optimum.probability * np.linspace(1.0 / points, 1.0, points)
        else:
            n_targets = targets
        frames.append(tradeoff_curve(template, loss, n, n_targets, kind=kind))
    table = pd.concat(frames, ignore_index=True)

    writer = ReportWriter(config.output_dir)
    stem = config.output or "tradeoff"
    csv_path = writer.write_csv(table, stem)
    json_path = writer.write_json(
        {"points": len(table)}, stem, metadata=_metadata("tradeoff", config, kind=kind)
    )
    print(f"✅ Trade-off curve written: {csv_path}, {json_path}")
    return EXIT_OK


def cmd_feasibility(options: Options) -> int:
    defaults = Config.FEASIBILITY_DEFAULTS
    config = RunConfig.from_options(options)
    rep_rate = options.get("rep_rate", float, defaults["rep_rate"])
    fidelity_floor = options.get("fidelity_floor", float, defaults["fidelity_floor"])
    rate_floor = options.get("rate_floor", float, defaults["rate_floor"])
    n_max = options.get("n_max", int, defaults["n_max"])
    eta_idler = defaults["eta_idler"] if config.eta_idler is None else config.eta_idler
    if n_max < 1:
        raise ConfigError(f"n_max must be >= 1, got {n_max}")

    report = feasibility(
        rep_rate=rep_rate,
        eta_idler=eta_idler,
        fidelity_floor=fidelity_floor,
        rate_floor=rate_floor,
        n_range=config.n or range(1, n_max + 1),
        template=config.template(),
    )

    print(f"📊 Fock-state rates at F >= {fidelity_floor:g}, eta_i = {eta_idler:g}, {rep_rate:g} pulses/s")
    print("=" * 40)
    for n, gain, rate in zip(report.n_values, report.per_n_gain, report.per_n_max_rate):
        mark = "✅" if rate >= rate_floor else "❌"
        print(f"   {mark} n={n:>3}  B={gain:8.5f}  rate={rate:12.5g}/s")
    print(f"🎯 Largest n at >= {rate_floor:g} events/s: {report.max_feasible_n}")

    writer = ReportWriter(config.output_dir)
    path = writer.write_json(
        report.to_dict(),
        config.output or "feasibility",
        metadata=_metadata("feasibility", config, rep_rate=rep_rate, n_max=n_max),
    )
    print(f"✅ Report written: {path}")
    return EXIT_OK


def _parse_starts(value: str) -> List[tuple]:
    starts = []
    for chunk in value.split(";"):
        if chunk.strip():
            point = tuple(float(v) for v in chunk.split(","))
            if len(point) != 3:
                raise ValueError(f"start points are 'K,eta_i,eta_s', got {chunk!r}")
            starts.append(point)
    return starts


def cmd_fit(options: Options) -> int:
    config = RunConfig.from_options(options)
    dataset = options.get("dataset", str)
    if dataset is None:
        raise ConfigError("fit needs a dataset CSV")
    starts = options.get("starts", _parse_starts)
    max_iter = options.get("max_iter", int, Config.FIT_MAX_ITER)
    arm = options.get("arm", str, "idler")

    runs = DataProcessor().load_dataset(dataset)
    print(f"🔄 Fitting {len(runs)} runs from {dataset}...")
    fit = fit_parameters(
        runs, k_max=config.k_max, starts=starts, max_iter=max_iter, workers=config.threads, arm=arm
    )

    writer = ReportWriter(config.output_dir)
    stem = config.output or "fit"
    json_path = writer.write_json(
        fit.to_dict(), stem, metadata=_metadata("fit", config, dataset=os.path.basename(dataset))
    )
    csv_path = writer.write_csv(fitted_curves(fit, runs, k_max=config.k_max), f"{stem}_curves")
    print(
        f"🎯 K = {fit.schmidt_number:.4f}, eta_i = {fit.eta_idler:.4f}, "
        f"eta_s = {fit.eta_signal:.4f} (residual {fit.residual:.4g})"
    )
    print(f"✅ Fit written: {json_path}, {csv_path}")
    return EXIT_OK


def cmd_tes_fit(options: Options) -> int:
    config = RunConfig.from_options(options)
    histogram_path = options.get("histogram", str)
    if histogram_path is None:
        raise ConfigError("tes-fit needs a histogram CSV")
    n_peaks = options.get("n_peaks", int)
    if n_peaks is None:
        raise ConfigError("tes-fit needs --n-peaks")
    bins = options.get("bins", int, 200)
    prominence = options.get("prominence", float, Config.TES_PROMINENCE)

    hist = DataProcessor().load_histogram(histogram_path, bins=bins)
    fit = fit_mixture(hist, n_peaks, prominence=prominence)

    for n, (component, window) in enumerate(zip(fit.components, fit.acceptance_windows)):
        print(
            f"📊 n={n}: center={component.center:.5g}, width={component.width:.4g}, "
            f"window=[{window[0]:.5g}, {window[1]:.5g}]"
        )
    writer = ReportWriter(config.output_dir)
    path = writer.write_json(
        fit.to_dict(),
        config.output or "mixture",
        metadata=_metadata("tes-fit", config, histogram=os.path.basename(histogram_path), n_peaks=n_peaks),
    )
    print(f"✅ Mixture written: {path}")
    return EXIT_OK


def cmd_tes_assign(options: Options) -> int:
    config = RunConfig.from_options(options)
    events_path = options.get("events", str)
    mixture_path = options.get("mixture", str)
    if events_path is None or mixture_path is None:
        raise ConfigError("tes-assign needs an events CSV and --mixture JSON")
    confidence = options.get("confidence", float, Config.TES_CONFIDENCE)

    with open(mixture_path, encoding="utf-8") as f:
        payload = json.load(f)
    fit = MixtureFit.from_dict(payload)
    record = assign_counts(DataProcessor().load_events(events_path), fit, confidence=confidence)

    writer = ReportWriter(config.output_dir)
    stem = config.output or "counts"
    json_path = writer.write_json(
        {"mixture": fit.to_dict(), "counts": record.to_dict()},
        stem,
        metadata=_metadata("tes-assign", config, events=os.path.basename(events_path)),
    )
    csv_path = writer.write_csv(record.to_frame(), stem)
    if record.overflow:
        print(f"⚠️  {record.overflow} events outside all acceptance windows")
    print(f"✅ Counts written: {json_path}, {csv_path}")
    return EXIT_OK


def cmd_allan(options: Options) -> int:
    config = RunConfig.from_options(options)
    series_path = options.get("series", str)
    if series_path is None:
        raise ConfigError("allan needs a series CSV")
    series = DataProcessor().load_series(series_path)
    block_sizes = options.get("block_sizes", _int_list)
    if block_sizes is None:
        block_sizes = [2**k for k in range(int(np.log2(max(series.size // 2, 1))) + 1)]

    table = allan_frame(series, block_sizes)
    writer = ReportWriter(config.output_dir)
    path = writer.write_csv(table, config.output or "allan")
    print(f"✅ Allan variance for {len(block_sizes)} block sizes written: {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat KEY=VALUE file; flags override its values")
    spectrum = common.add_mutually_exclusive_group()
    spectrum.add_argument("--mu", type=float, help="Schmidt mode decay mu in [0, 1)")
    spectrum.add_argument("--schmidt-number", type=float, help="Schmidt number K >= 1")
    spectrum.add_argument("--equal-modes", type=int, help="number of equally weighted modes")
    common.add_argument("--k-max", type=int, help=f"Schmidt modes kept (default {Config.K_MAX})")
    common.add_argument("--eta-signal", type=float, help="signal arm transmission")
    common.add_argument("--eta-idler", type=float, help="idler (heralding) arm transmission")
    common.add_argument("--n", help="comma separated photon numbers")
    common.add_argument("--xtol", type=float, help="golden-section tolerance on the gain")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads (env FOCK_THREADS)")
    common.add_argument("--output-dir", help=f"output directory (default {Config.OUTPUT_DIR})")
    common.add_argument("--output", help="output file stem")
    common.add_argument("--log-level", help=f"logging level (default {Config.LOG_LEVEL})")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="fock", description="Heralded Fock states from multimode parametric down-conversion"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("sweep", parents=[common], help="p_n and fidelities versus optical gain")
    sweep.add_argument("--gains", help="comma separated optical gains")
    sweep.add_argument("--gain-range", help="start,stop,points")
    sweep.add_argument("--preset", choices=sorted(Config.SWEEP_PRESETS), help="sweep preset")
    sweep.set_defaults(handler=cmd_sweep)

    max_prob = sub.add_parser("max-prob", parents=[common], help="gain maximising p_n")
    max_prob.set_defaults(handler=cmd_max_prob)

    tradeoff = sub.add_parser("tradeoff", parents=[common], help="fidelity versus heralding probability")
    tradeoff.add_argument("--targets", help="comma separated heralding probabilities")
    tradeoff.add_argument("--points", type=int, help="targets as fractions of p* (default 20)")
    tradeoff.add_argument("--kind", choices=["single_mode", "photon_number"])
    tradeoff.set_defaults(handler=cmd_tradeoff)

    feas = sub.add_parser("feasibility", parents=[common], help="highest rates at a fidelity floor")
    feas.add_argument("--rep-rate", type=float, help="pump pulses per second")
    feas.add_argument("--fidelity-floor", type=float)
    feas.add_argument("--rate-floor", type=float, help="events per second")
    feas.add_argument("--n-max", type=int)
    feas.set_defaults(handler=cmd_feasibility)

    fit = sub.add_parser("fit", parents=[common], help="fit K, eta_i, eta_s to a dataset")
    fit.add_argument("dataset", nargs="?", help="dataset CSV")
    fit.add_argument("--starts", help="'K,eta_i,eta_s;...' starting points")
    fit.add_argument("--max-iter", type=int)
    fit.add_argument("--arm", choices=["idler", "signal"], help="arm of the measured mean photon number (default idler)")
    fit.set_defaults(handler=cmd_fit)

    tes_fit = sub.add_parser("tes-fit", parents=[common], help="Gaussian mixture fit of a TES histogram")
    tes_fit.add_argument("histogram", nargs="?", help="CSV with value[,count]")
    tes_fit.add_argument("--n-peaks", type=int)
    tes_fit.add_argument("--bins", type=int, help="bins when the CSV lists raw pulse areas")
    tes_fit.add_argument("--prominence", type=float)
    tes_fit.set_defaults(handler=cmd_tes_fit)

    tes_assign = sub.add_parser("tes-assign", parents=[common], help="photon-number counts from pulse areas")
    tes_assign.add_argument("events", nargs="?", help="CSV with value[,count]")
    tes_assign.add_argument("--mixture", help="mixture JSON written by tes-fit")
    tes_assign.add_argument("--confidence", type=float)
    tes_assign.set_defaults(handler=cmd_tes_assign)

    allan = sub.add_parser("allan", parents=[common], help="Allan variance of a measurement series")
    allan.add_argument("series", nargs="?", help="CSV with a value column")
    allan.add_argument("--block-sizes", help="comma separated block sizes")
    allan.set_defaults(handler=cmd_allan)

    return parser


def _report_error(payload: Dict) -> None:
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=(args.log_level or Config.LOG_LEVEL).upper(),
        format=Config.LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )

    try:
        file_values = {}
        if args.config:
            if not os.path.exists(args.config):
                raise FileNotFoundError(f"Config file not found: {args.config}")
            file_values = {k.upper(): v for k, v in dotenv_values(args.config).items()}
        preset_name = getattr(args, "preset", None) or file_values.get("PRESET")
        preset = {}
        if preset_name:
            if preset_name not in Config.SWEEP_PRESETS:
                raise ConfigError(f"unknown preset {preset_name!r}; choose from {sorted(Config.SWEEP_PRESETS)}")
            preset = dict(Config.SWEEP_PRESETS[preset_name])
            preset["preset"] = preset_name
        return args.handler(Options(args, file_values, preset))
    except FockError as e:
        logger.error("%s", e)
        _report_error(e.to_dict())
        return e.exit_code
    except ValueError as e:
        logger.error("%s", e)
        _report_error({"error": type(e).__name__, "message": str(e)})
        return EXIT_CONFIG
    except OSError as e:
        logger.error("%s", e)
        _report_error({"error": type(e).__name__, "message": str(e)})
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
