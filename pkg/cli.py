import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, model_validator

from dist_matrix import (
    dist_parts_merge_files,
    file_labels,
    is_normalized,
    read_matrix_csv,
    ts_dist,
    ts_dist_part,
    ts_dist_part_file,
    write_labels,
    write_matrix_csv,
    write_part,
)
from distances import EVENT_KERNELS, KERNELS, DistanceKernel, EsParams, SignificanceSpec, VrParams, make_kernel
from errors import DataError, EXIT_OK, InvalidArgumentError, exit_code_for
from graph_io_analysis import girvan_newman, graph_stats, read_network, write_network
from net_build import BUILDERS, Network, make_builder
from series_core import (
    BIN_RULES,
    TimeSeries,
    dataset_sincos_generate,
    load_series,
    random_ets,
    read_series_csv,
    write_events_csv,
    write_series_csv,
)
from single_series_nets import EmbeddingSpec, VG_ALGORITHMS, VG_KINDS, tsnet_qn, tsnet_rn, tsnet_vg, tsnet_windows

logger = logging.getLogger(__name__)

# 常量
CONFIG_FILE = "settings.cfg"
CONFIG_SECTION = "seriesnet"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
DEFAULT_SETTINGS = {"workers": "1", "log_level": "INFO", "format": "edgelist", "alpha": "0.05"}
ENV_KEYS = {
    "workers": "SERIESNET_WORKERS",
    "log_level": "SERIESNET_LOG_LEVEL",
    "format": "SERIESNET_FORMAT",
}
OUTPUT_FORMATS = ("edgelist", "graphml")


# ---- configuration ----

class Settings(BaseModel):
    model_config = ConfigDict(frozen=True)

    workers: int = 1
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    format: Literal["edgelist", "graphml"] = "edgelist"
    alpha: float = 0.05

    @model_validator(mode="after")
    def _check(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        return self


def load_configuration(config_file: str = CONFIG_FILE, create_missing: bool = False) -> configparser.ConfigParser:
    config = configparser.ConfigParser()
    if os.path.exists(config_file):
        config.read(config_file, encoding="utf-8-sig")
    elif create_missing:
        config[CONFIG_SECTION] = DEFAULT_SETTINGS
        with open(config_file, "w", encoding="utf-8") as f:
            config.write(f)
    return config


def read_flat_config(path) -> Dict[str, str]:
    """key=value file; the [seriesnet] header is optional."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except OSError as e:
        raise DataError(f"cannot read config ({e})", str(path))
    if not text.lstrip().startswith("["):
        text = f"[{CONFIG_SECTION}]\n{text}"
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise DataError(f"malformed config ({e})", str(path))
    if not parser.has_section(CONFIG_SECTION):
        return {}
    return dict(parser[CONFIG_SECTION])


def resolve_settings(config_path: Optional[str] = None, config_file: str = CONFIG_FILE,
                     create_missing: bool = False) -> Settings:
    """settings.cfg, then environment (.env honoured), then --config. Only the app
    writes a default settings.cfg; CLI runs leave the working directory alone."""
    values = dict(DEFAULT_SETTINGS)
    config = load_configuration(config_file, create_missing)
    if config.has_section(CONFIG_SECTION):
        values.update(config[CONFIG_SECTION])
    load_dotenv()
    for key, env in ENV_KEYS.items():
        if os.getenv(env):
            values[key] = os.getenv(env)
    if config_path:
        values.update(read_flat_config(config_path))
    unknown = set(values) - set(DEFAULT_SETTINGS)
    if unknown:
        raise InvalidArgumentError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
    values["log_level"] = values["log_level"].upper()
    return Settings(**values)


class PipelineConfig(BaseModel):
    """Everything a run depends on besides its input files."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    command: str
    metric: Optional[str] = None
    metric_params: Dict[str, Any] = {}
    builder: Optional[str] = None
    builder_params: Dict[str, Any] = {}
    output_format: Literal["edgelist", "graphml"] = "edgelist"
    seed: Optional[int] = None
    workers: int = 1

    @model_validator(mode="after")
    def _check(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        sig = self.metric_params.get("sig")
        needs_seed = self.command == "generate" or (sig is not None and sig.method == "surrogate")
        if needs_seed and self.seed is None:
            raise ValueError(f"{self.command} needs an explicit --seed")
        return self

    def describe(self) -> str:
        return json.dumps(self.model_dump(), default=str, sort_keys=True)


# ---- argument helpers ----

def _bins(text: str):
    if text.isdigit():
        return int(text)
    if text not in BIN_RULES:
        raise argparse.ArgumentTypeError(f"use an integer or one of {', '.join(BIN_RULES)}")
    return text


def _tau(text: str):
    if text == "local":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("tau must be a number or 'local'")


def _add_metric_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("distance")
    group.add_argument("--metric", choices=sorted(KERNELS), default="cor")
    group.add_argument("--mode", choices=["abs", "pos", "neg"], default="abs", help="cor/ccf sign handling")
    group.add_argument("--sig", choices=["fisher", "surrogate"],
                       help="set non-significant pairs to the kernel maximum (1; vr: its ceiling)")
    group.add_argument("--alpha", type=float, help="significance level (default from settings)")
    group.add_argument("--tau-max", type=int, default=0, help="ccf maximum lag")
    group.add_argument("--bins", type=_bins, default="sturges", help="nmi/voi bin rule or count")
    group.add_argument("--norm", choices=["half_sum", "min", "max", "sqrt"], default="sqrt")
    group.add_argument("--tau", type=_tau, default=1.0, help="es window (or 'local') / vr time scale")
    group.add_argument("--es-tau-max", type=float)
    group.add_argument("--es-mode", choices=["symmetric", "asymmetric"], default="symmetric")
    group.add_argument("--kernel", choices=["gaussian", "laplacian"], default="laplacian")
    group.add_argument("--n-surrogates", type=int, default=100)
    group.add_argument("--seed", type=int)
    group.add_argument("--event-percentile", type=float, help="es/vr: share of values marked as events")
    group.add_argument("--event-direction", choices=["highest", "lowest"], default="highest")
    group.add_argument("--workers", type=int)


def _add_builder_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("network")
    group.add_argument("--builder", choices=sorted(BUILDERS), default="enn",
                       help="significant expects a matrix written by dist --sig")
    group.add_argument("--k", type=int)
    group.add_argument("--eps", type=float)
    group.add_argument("--eps-percentile", type=float)
    group.add_argument("--normalize", action="store_true", help="min-max normalize before a weighted build")
    group.add_argument("--ceiling", type=float,
                       help="significant builder: distance marking non-significant pairs in a matrix "
                            "computed with --sig (default 1; dist logs the vr value)")


def _add_output_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True)
    parser.add_argument("--format", dest="output_format", choices=OUTPUT_FORMATS)


def metric_params(args, settings: Settings) -> Dict[str, Any]:
    alpha = args.alpha if args.alpha is not None else settings.alpha
    sig = None
    if args.sig == "fisher":
        if args.metric not in ("cor", "ccf"):
            raise InvalidArgumentError(f"--sig fisher applies to cor and ccf, not {args.metric}")
        sig = SignificanceSpec(alpha=alpha, method="fisher_z")
    elif args.sig == "surrogate":
        if args.metric not in EVENT_KERNELS:
            raise InvalidArgumentError(f"--sig surrogate applies to {' and '.join(EVENT_KERNELS)}, not {args.metric}")
        if args.seed is None:
            raise InvalidArgumentError("--sig surrogate needs an explicit --seed")
        sig = SignificanceSpec(alpha=alpha, method="surrogate", n_surrogates=args.n_surrogates, seed=args.seed)

    if args.metric == "cor":
        return {"mode": args.mode, "sig": sig}
    if args.metric == "ccf":
        return {"tau_max": args.tau_max, "mode": args.mode, "sig": sig}
    if args.metric == "nmi":
        return {"rule": args.bins, "norm": args.norm}
    if args.metric == "voi":
        return {"rule": args.bins}
    if args.metric == "es":
        return {"params": EsParams(tau=args.tau, tau_max=args.es_tau_max, mode=args.es_mode), "sig": sig}
    if args.metric == "vr":
        if args.tau == "local":
            raise InvalidArgumentError("vr needs a numeric --tau")
        return {"params": VrParams(kernel=args.kernel, tau=args.tau), "sig": sig}
    return {}


def kernel_from_args(args, settings: Settings) -> DistanceKernel:
    params = metric_params(args, settings)
    if args.metric in EVENT_KERNELS and args.event_percentile is None:
        raise InvalidArgumentError(f"{args.metric} compares events; pass --event-percentile")
    return make_kernel(args.metric, event_percentile=args.event_percentile,
                       event_direction=args.event_direction, **params)


def builder_params(args) -> Dict[str, Any]:
    if args.builder == "knn":
        if args.k is None:
            raise InvalidArgumentError("the knn builder needs --k")
        return {"k": args.k}
    if args.builder == "enn":
        if (args.eps is None) == (args.eps_percentile is None):
            raise InvalidArgumentError("the enn builder needs exactly one of --eps and --eps-percentile")
        return {"eps": args.eps} if args.eps is not None else {"eps_percentile": args.eps_percentile}
    if args.builder == "weighted":
        return {"normalize": args.normalize}
    if args.builder == "significant" and args.ceiling is not None:
        return {"ceiling": args.ceiling}
    return {}


def _pipeline(args, settings: Settings, **fields) -> PipelineConfig:
    config = PipelineConfig(
        command=args.command,
        output_format=getattr(args, "output_format", None) or settings.format,
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None) or settings.workers,
        **fields,
    )
    logger.info(f"run: {config.describe()}")
    return config


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _single_series(path, column: Optional[str]) -> TimeSeries:
    series = read_series_csv(path)
    if column is None:
        if len(series) != 1:
            raise InvalidArgumentError(f"{path} holds {len(series)} series; pick one with --column")
        return series[0]
    for s in series:
        if s.id == column:
            return s
    raise InvalidArgumentError(f"no column {column!r} in {path}")


# ---- commands ----

def cmd_dist(args, settings: Settings) -> None:
    kernel = kernel_from_args(args, settings)
    config = _pipeline(args, settings, metric=args.metric, metric_params=kernel.params)
    series = load_series(args.input)
    D = ts_dist(series, kernel, workers=config.workers)
    write_matrix_csv(D, args.out)
    logger.info(f"wrote {D.n}x{D.n} matrix to {args.out}")
    if args.sig is not None:
        logger.info(f"non-significant pairs hold {kernel.ceiling!r} (net --builder significant --ceiling)")


def cmd_dist_part(args, settings: Settings) -> None:
    kernel = kernel_from_args(args, settings)
    config = _pipeline(args, settings, metric=args.metric, metric_params=kernel.params)
    source = Path(args.input)
    if source.is_dir():
        part = ts_dist_part_file(source, kernel, args.part, args.of)
        labels = file_labels(source)
    else:
        series = load_series(source)
        part = ts_dist_part(series, kernel, args.part, args.of, workers=config.workers)
        labels = [s.id for s in series]
    write_part(part, args.out)
    write_labels(labels, args.out)


def cmd_merge(args, settings: Settings) -> None:
    _pipeline(args, settings)
    D = dist_parts_merge_files(args.parts, n=args.n)
    write_matrix_csv(D, args.out)
    logger.info(f"merged {D.n}x{D.n} matrix written to {args.out}")


def _write(net: Network, args, config: PipelineConfig) -> None:
    write_network(net, args.out, config.output_format)


def cmd_net(args, settings: Settings) -> None:
    params = builder_params(args)
    config = _pipeline(args, settings, builder=args.builder, builder_params=params)
    D = read_matrix_csv(args.matrix)
    if args.builder == "weighted" and not args.normalize and not is_normalized(D):
        raise InvalidArgumentError("distances exceed 1; rerun with --normalize for a weighted network")
    _write(make_builder(args.builder, **params)(D), args, config)


def cmd_single(args, settings: Settings) -> None:
    series = _single_series(args.input, args.column)
    if args.kind_of_net == "vg":
        config = _pipeline(args, settings, builder="vg")
        net = tsnet_vg(series, kind=args.kind, directed=args.directed, limit=args.limit, algorithm=args.algorithm)
    elif args.kind_of_net == "qn":
        config = _pipeline(args, settings, builder="qn", builder_params={"breaks": args.breaks})
        net = tsnet_qn(series, args.breaks)
    elif args.kind_of_net == "rn":
        spec = EmbeddingSpec(m=args.m, tau_embed=args.tau_embed, metric=args.space_metric, radius=args.radius)
        config = _pipeline(args, settings, builder="rn", builder_params=spec.model_dump())
        net = tsnet_rn(series, spec)
    else:
        kernel = kernel_from_args(args, settings)
        params = builder_params(args)
        if args.builder == "significant":
            params.setdefault("ceiling", kernel.ceiling)
        config = _pipeline(args, settings, metric=args.metric, metric_params=kernel.params,
                           builder=args.builder, builder_params=params)
        net = tsnet_windows(series, args.width, args.step, kernel, make_builder(args.builder, **params),
                            workers=config.workers)
    _write(net, args, config)


def _stats_text(net: Network) -> str:
    stats = graph_stats(net)
    return (
        f"nodes: {stats.n}\n"
        f"edges: {stats.m}\n"
        f"density: {stats.density:.6g}\n"
        f"components: {stats.components} (sizes: {' '.join(map(str, stats.component_sizes))})\n"
        f"degrees: {' '.join(map(str, stats.degrees))}\n"
    )


def _node_labels(args) -> Optional[List[str]]:
    if args.nodes is None:
        return None
    try:
        text = Path(args.nodes).read_text(encoding="utf-8-sig")
    except OSError as e:
        raise DataError(f"cannot read node labels ({e})", args.nodes)
    return [line for line in text.splitlines() if line]


def cmd_stats(args, settings: Settings) -> None:
    _pipeline(args, settings)
    net = read_network(args.network, directed=args.directed, node_labels=_node_labels(args))
    if args.json:
        _emit(graph_stats(net).model_dump_json(indent=2) + "\n", args.out)
    else:
        _emit(_stats_text(net), args.out)


def cmd_communities(args, settings: Settings) -> None:
    _pipeline(args, settings)
    partition = girvan_newman(read_network(args.network, node_labels=_node_labels(args)))
    if args.json:
        report = {
            "groups": partition.groups,
            "modularity": partition.modularity,
            "communities": partition.communities,
        }
        _emit(json.dumps(report, indent=2) + "\n", args.out)
        return
    lines = [f"clustering edge betweenness, groups: {partition.groups}, mod: {partition.modularity:.2f}"]
    lines += [f"[{cid}] {' '.join(members)}" for cid, members in enumerate(partition.communities, start=1)]
    _emit("\n".join(lines) + "\n", args.out)


def cmd_generate(args, settings: Settings) -> None:
    _pipeline(args, settings)
    if args.kind_of_data == "sincos":
        write_series_csv(dataset_sincos_generate(args.each, args.length, args.noise, args.seed), args.out)
    else:
        write_events_csv(random_ets(args.horizon, args.n, args.seed), args.out)
    logger.info(f"wrote {args.kind_of_data} data to {args.out}")


# ---- parser ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seriesnet", description="Time series to complex networks")
    parser.add_argument("--config", help="key=value file overriding settings.cfg and the environment")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("dist", help="pairwise distance matrix")
    p.add_argument("input", help="wide CSV or directory of single-series CSVs")
    _add_metric_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_dist)

    p = commands.add_parser("dist-part", help="one part of the pairwise distances")
    p.add_argument("input")
    _add_metric_flags(p)
    p.add_argument("--part", type=int, required=True)
    p.add_argument("--of", type=int, required=True)
    p.add_argument("--out", required=True, help="directory for part files")
    p.set_defaults(handler=cmd_dist_part)

    p = commands.add_parser("merge", help="merge part files into a matrix")
    p.add_argument("parts", help="directory of part files")
    p.add_argument("--n", type=int, help="series count (default: from labels.txt)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_merge)

    p = commands.add_parser("net", help="network from a distance matrix")
    p.add_argument("matrix")
    _add_builder_flags(p)
    _add_output_flags(p)
    p.set_defaults(handler=cmd_net)

    p = commands.add_parser("single", help="network from one series")
    single = p.add_subparsers(dest="kind_of_net", required=True)
    for name in ("vg", "qn", "rn", "windows"):
        sp = single.add_parser(name)
        sp.add_argument("input")
        sp.add_argument("--column", help="series id when the CSV holds several")
        _add_output_flags(sp)
        sp.set_defaults(handler=cmd_single, command="single")
        if name == "vg":
            sp.add_argument("--kind", choices=VG_KINDS, default="natural")
            sp.add_argument("--directed", action="store_true")
            sp.add_argument("--limit", type=int)
            sp.add_argument("--algorithm", choices=VG_ALGORITHMS, default="naive")
        elif name == "qn":
            sp.add_argument("--breaks", type=int, required=True)
        elif name == "rn":
            sp.add_argument("--m", type=int, default=1)
            sp.add_argument("--tau-embed", type=int, default=1)
            sp.add_argument("--space-metric", choices=["euclidean", "manhattan", "chebyshev"], default="euclidean")
            sp.add_argument("--radius", type=float, required=True)
        else:
            sp.add_argument("--width", type=int, required=True)
            sp.add_argument("--step", "--by", dest="step", type=int, default=1)
            _add_metric_flags(sp)
            _add_builder_flags(sp)

    for name, handler in (("stats", cmd_stats), ("communities", cmd_communities)):
        p = commands.add_parser(name)
        p.add_argument("network", help="edge list (TSV) or .graphml file")
        p.add_argument("--json", action="store_true")
        p.add_argument("--nodes", help="node labels, one per line (e.g. labels.txt); restores isolated nodes "
                                      "an edge list cannot carry")
        p.add_argument("--out")
        if name == "stats":
            p.add_argument("--directed", action="store_true", help="read an edge list as directed")
        p.set_defaults(handler=handler)

    p = commands.add_parser("generate", help="synthetic data")
    data = p.add_subparsers(dest="kind_of_data", required=True)
    sp = data.add_parser("sincos")
    sp.add_argument("--each", type=int, required=True)
    sp.add_argument("--length", type=int, required=True)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(handler=cmd_generate, command="generate")
    sp = data.add_parser("events")
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(handler=cmd_generate, command="generate")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        settings = resolve_settings(args.config)
    except Exception as e:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logger.error(f"configuration: {e}")
        return exit_code_for(e)

    logging.basicConfig(level=getattr(logging, settings.log_level), format=LOG_FORMAT)
    try:
        args.handler(args, settings)
    except Exception as e:
        logger.error(str(e))
        return exit_code_for(e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
