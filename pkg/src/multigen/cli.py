"""Command-line entry point: ``multigen {simulate,moments,fit,regress,replicate}``.

Exit codes: 0 success, 2 usage or parameter error, 3 data validation error,
4 numerical infeasibility.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from . import estimators as est
from . import experiments
from .io import (
    PanelFormatError,
    emit,
    export_panel,
    load_panel,
    panel_to_csv,
    panel_to_json,
    render,
    run_header,
)
from .models import MODELS, ModelError, spec_from_dict, spec_to_dict
from .moments import MomentSet, PreconditionError, analytic_moments
from .pedigree import PedigreeError, SimTopology
from .simulate import SimulationError, simulate

SCHEMA_ID = "multigen.config/1"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INFEASIBLE = 0, 2, 3, 4

log = logging.getLogger("multigen")

# flag dest -> model parameter key (full field name)
PARAM_FLAGS = {
    "rho": "rho",
    "lambda_": "lambda",
    "shared_u": "shared_u",
    "shared_v": "shared_v",
    "gamma_p": "gamma_p",
    "gamma_gp": "gamma_gp",
    "rho1_sq": "rho1_sq",
    "rho2_sq": "rho2_sq",
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "gamma_low": "gamma_low",
    "gamma_high": "gamma_high",
    "ybar": "ybar",
    "shock_sd": "shock_sd",
    "lambda_tilde": "lambda_tilde",
    "m": "m",
}
TOPOLOGY_FLAGS = {"dynasties": "n_dynasties", "generations": "generations",
                  "children": "children_per_family"}
OPTION_KEYS = {
    "simulate": {"workers", "include_latent", "format"},
    "moments": {"max_k", "series", "format"},
    "fit": {"beta1", "beta2", "beta", "moments_file", "misfit_tol"},
    "regress": {"panel", "panel_format", "estimator", "k", "lags", "controls", "line",
                "descendant_generation", "n_boot", "format"},
    "replicate": {"experiment"},
}
CONFIG_KEYS = {"schema_id", "command", "seed", "verbosity", "model", "topology", "options", "output"}


class UsageError(ValueError):
    """Bad command line or config; every problem is listed."""

    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    verbosity: int = 0
    model: dict | None = None
    topology: dict | None = None
    options: dict = field(default_factory=dict)
    output: str | None = None

    def to_dict(self) -> dict:
        return {"schema_id": SCHEMA_ID, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        problems = config_problems(doc)
        if problems:
            raise UsageError(problems)
        body = {k: v for k, v in doc.items() if k != "schema_id"}
        return cls(**body)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config: invalid JSON ({exc})") from None
        return cls.from_dict(doc)


def config_problems(doc, command: str | None = None) -> list[str]:
    """Unknown or malformed keys in a config document, each named by its path."""
    if not isinstance(doc, dict):
        return ["config: top level must be a JSON object"]
    out = []
    for key in sorted(set(doc) - CONFIG_KEYS):
        out.append(f"config.{key}: unknown key")
    if "schema_id" in doc and doc["schema_id"] != SCHEMA_ID:
        out.append(f"config.schema_id: expected {SCHEMA_ID!r}, got {doc['schema_id']!r}")
    cmd = doc.get("command", command)
    if cmd is not None and cmd not in OPTION_KEYS:
        out.append(f"config.command: unknown command {cmd!r}")
    if "seed" in doc and (not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool)):
        out.append("config.seed: must be an integer")
    for blk in ("model", "topology", "options"):
        if blk in doc and doc[blk] is not None and not isinstance(doc[blk], dict):
            out.append(f"config.{blk}: must be an object")
    model = doc.get("model")
    if isinstance(model, dict):
        for key in sorted(set(model) - {"model", "params"}):
            out.append(f"config.model.{key}: unknown key")
    topo = doc.get("topology")
    if isinstance(topo, dict):
        for key in sorted(set(topo) - set(TOPOLOGY_FLAGS.values())):
            out.append(f"config.topology.{key}: unknown key")
    opts = doc.get("options")
    if isinstance(opts, dict) and cmd in OPTION_KEYS:
        for key in sorted(set(opts) - OPTION_KEYS[cmd]):
            out.append(f"config.options.{key}: unknown key for {cmd}")
    return out


def _add_model_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=sorted(MODELS))
    g.add_argument("--rho", type=float)
    g.add_argument("--lambda", dest="lambda_", type=float)
    g.add_argument("--shared-u", type=float)
    g.add_argument("--shared-v", type=float)
    g.add_argument("--gamma-p", type=float)
    g.add_argument("--gamma-gp", type=float)
    g.add_argument("--rho1-sq", type=float)
    g.add_argument("--rho2-sq", type=float)
    g.add_argument("--lambda1", type=float)
    g.add_argument("--lambda2", type=float)
    g.add_argument("--gamma-low", type=float)
    g.add_argument("--gamma-high", type=float)
    g.add_argument("--ybar", type=float)
    g.add_argument("--shock-sd", type=float)
    g.add_argument("--lambda-tilde", type=float)
    g.add_argument("--m", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path (stdout when omitted)")
    common.add_argument("-v", "--verbose", action="count", default=None)

    parser = argparse.ArgumentParser(prog="multigen",
                                     description="Multigenerational transmission models.")
    parser.add_argument("--version", action="version", version=f"multigen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a dynasty panel")
    _add_model_flags(p)
    p.add_argument("--dynasties", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--children", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--include-latent", action="store_true", default=None)
    p.add_argument("--format", choices=["csv", "json"])

    p = sub.add_parser("moments", parents=[common], help="closed-form kinship correlations")
    _add_model_flags(p)
    p.add_argument("--max-k", type=int)
    p.add_argument("--series", choices=["beta_k", "latent_beta_k", "first_share_k"])
    p.add_argument("--format", choices=["json", "csv"])

    p = sub.add_parser("fit", parents=[common], help="fit the latent factor model to moments")
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--beta", action="append", metavar="K=VALUE", help="extra moment, repeatable")
    p.add_argument("--moments", dest="moments_file", help="MomentSet JSON file")
    p.add_argument("--misfit-tol", type=float)

    p = sub.add_parser("regress", parents=[common], help="run an estimator on a panel file")
    p.add_argument("--panel")
    p.add_argument("--panel-format", choices=["csv", "json"])
    p.add_argument("--estimator", choices=["beta_k", "multigen", "sibling", "sibling_parent",
                                          "group", "excess", "duality", "moments"])
    p.add_argument("--k", type=int)
    p.add_argument("--lags", help="comma-separated ancestor distances, e.g. 1,2")
    p.add_argument("--controls", help="comma-separated: mother_y,spouse_y,grandmother_y")
    p.add_argument("--line", choices=["father", "mother"])
    p.add_argument("--descendant-generation")
    p.add_argument("--n-boot", type=int)
    p.add_argument("--format", choices=["json", "table"])

    p = sub.add_parser("replicate", parents=[common], help="replicate a figure or table")
    p.add_argument("experiment", nargs="?", choices=list(experiments.EXPERIMENTS))
    return parser


def _read_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: invalid JSON ({exc})") from None
    return doc


def parse_cli(argv=None) -> RunConfig:
    """Parse flags, merge an optional JSON config under them and validate the result."""
    args = build_parser().parse_args(argv)
    cmd = args.command
    doc = _read_config(args.config) if args.config else {}
    problems = config_problems(doc, cmd)
    if doc.get("command") not in (None, cmd):
        problems.append(f"config.command: {doc['command']!r} does not match {cmd!r}")
    if problems:
        raise UsageError(problems)

    cfg = RunConfig(command=cmd, seed=doc.get("seed", 0), verbosity=doc.get("verbosity", 0),
                    model=doc.get("model"), topology=dict(doc.get("topology") or {}),
                    options=dict(doc.get("options") or {}), output=doc.get("output"))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.verbose is not None:
        cfg.verbosity = args.verbose
    if args.out is not None:
        cfg.output = args.out

    if cmd in ("simulate", "moments"):
        model = dict(cfg.model or {})
        params = dict(model.get("params") or {})
        if args.model is not None:
            if model.get("model") not in (None, args.model):
                params = {}
            model["model"] = args.model
        for dest, key in PARAM_FLAGS.items():
            val = getattr(args, dest)
            if val is not None:
                params[key] = val
        if "model" not in model:
            problems.append("missing required argument --model")
        else:
            model["params"] = params
            try:
                spec_from_dict(model)
            except ModelError as exc:
                problems += list(exc.violations)
        cfg.model = model
    if cmd == "simulate":
        for dest, key in TOPOLOGY_FLAGS.items():
            val = getattr(args, dest)
            if val is not None:
                cfg.topology[key] = val
        for key in ("n_dynasties", "generations"):
            if key not in cfg.topology:
                flag = {v: k for k, v in TOPOLOGY_FLAGS.items()}[key]
                problems.append(f"missing required argument --{flag} ({key})")
    if cmd != "simulate":
        cfg.topology = cfg.topology or None

    for key in OPTION_KEYS[cmd]:
        if key == "experiment" and args.experiment is not None:
            cfg.options["experiment"] = args.experiment
            continue
        val = getattr(args, key, None)
        if val is not None:
            cfg.options[key] = val
    problems += _command_problems(cfg)
    if problems:
        raise UsageError(problems)
    return cfg


def _command_problems(cfg: RunConfig) -> list[str]:
    o = cfg.options
    out = []
    if cfg.command == "fit":
        if o.get("moments_file") is None and ("beta1" not in o or "beta2" not in o):
            if not (o.get("beta") and len(o["beta"]) >= 2):
                out.append("fit needs --beta1 and --beta2, repeated --beta K=VALUE, or --moments FILE")
    if cfg.command == "regress" and not o.get("panel"):
        out.append("missing required argument --panel")
    if cfg.command == "replicate" and not o.get("experiment"):
        out.append(f"missing experiment; choose from {', '.join(experiments.EXPERIMENTS)}")
    if cfg.command == "simulate" and o.get("workers") is not None and o["workers"] < 1:
        out.append("--workers must be >= 1")
    return out


def _header(cfg: RunConfig, spec=None, topo=None, **extra) -> dict:
    model = spec_to_dict(spec) if spec is not None else cfg.model
    return run_header(seed=cfg.seed, model=model, topology=topo, command=cfg.command, **extra)


def _write_text(cfg: RunConfig, text: str):
    if cfg.output:
        path = Path(cfg.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    else:
        sys.stdout.write(text)


def _json_doc(header: dict, result) -> str:
    return render({"header": header, "result": result.to_dict() if hasattr(result, "to_dict") else result})


def _csv_with_header(header: dict, body: str) -> str:
    return "# " + json.dumps(header, sort_keys=True) + "\n" + body


def cmd_simulate(cfg: RunConfig) -> int:
    spec = spec_from_dict(cfg.model)
    t = cfg.topology
    topo = SimTopology(t["n_dynasties"], t["generations"], t.get("children_per_family", 1), cfg.seed)
    o = cfg.options
    ped = simulate(spec, topo, workers=o.get("workers", 1))
    fmt = o.get("format") or (Path(cfg.output).suffix.lstrip(".") if cfg.output else "csv")
    fmt = "json" if fmt == "json" else "csv"
    # worker count is deliberately left out so outputs match across worker counts
    meta = _header(cfg, spec, topo.to_dict())
    latent = bool(o.get("include_latent"))
    if cfg.output:
        export_panel(ped, cfg.output, fmt, latent, meta)
    else:
        text = panel_to_csv(ped, latent, meta) if fmt == "csv" else panel_to_json(ped, latent, meta) + "\n"
        sys.stdout.write(text)
    log.info("simulated %d persons", len(ped))
    return EXIT_OK


def cmd_moments(cfg: RunConfig) -> int:
    spec = spec_from_dict(cfg.model)
    o = cfg.options
    mom = analytic_moments(spec, o.get("max_k", 7))
    head = _header(cfg, spec)
    if o.get("format") == "csv":
        _write_text(cfg, _csv_with_header(head, mom.to_csv(o.get("series") or "beta_k")))
    else:
        _write_text(cfg, _json_doc(head, mom))
    return EXIT_OK


def _parse_betas(items) -> dict[int, float]:
    out = {}
    for item in items or ():
        try:
            k, v = item.split("=", 1)
            out[int(k)] = float(v)
        except ValueError:
            raise UsageError(f"--beta {item!r}: expected K=VALUE") from None
    return out


def cmd_fit(cfg: RunConfig) -> int:
    o = cfg.options
    if o.get("moments_file"):
        try:
            doc = json.loads(Path(o["moments_file"]).read_text())
        except OSError as exc:
            raise PanelFormatError(f"{o['moments_file']}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise PanelFormatError(f"{o['moments_file']}: invalid JSON ({exc})") from None
        doc = doc.get("result", doc)
        try:
            mom = MomentSet.from_dict(doc)
        except (KeyError, TypeError, ValueError) as exc:
            raise PanelFormatError(f"{o['moments_file']}: not a moment set ({exc})") from None
    else:
        beta = _parse_betas(o.get("beta"))
        if "beta1" in o:
            beta[1] = o["beta1"]
        if "beta2" in o:
            beta[2] = o["beta2"]
        try:
            mom = MomentSet(beta)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    res = est.fit_latent_factor(mom, o.get("misfit_tol", 1e-6))
    head = _header(cfg, moments=mom.to_dict()["beta_k"])
    head["model"] = "latent_factor"
    _write_text(cfg, _json_doc(head, res))
    return EXIT_OK


def _csv_ints(text, flag) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers") from None


def _panel_meta(path) -> dict:
    try:
        with open(path) as fh:
            first = fh.readline()
    except OSError:
        return {}
    if first.startswith("# "):
        try:
            return json.loads(first[2:])
        except json.JSONDecodeError:
            return {}
    if first.lstrip().startswith("{"):
        try:
            return json.loads(Path(path).read_text()).get("meta") or {}
        except (json.JSONDecodeError, AttributeError):
            return {}
    return {}


def cmd_regress(cfg: RunConfig) -> int:
    o = cfg.options
    ped = load_panel(o["panel"], o.get("panel_format"))
    kind = o.get("estimator", "multigen")
    line = o.get("line", "father")
    desc = o.get("descendant_generation")
    if desc not in (None, "last"):
        try:
            desc = int(desc)
        except ValueError:
            raise UsageError("--descendant-generation must be an integer or 'last'") from None
    controls = o.get("controls") or ()
    if isinstance(controls, str):
        controls = tuple(c.strip() for c in controls.split(",") if c.strip())
    if kind == "beta_k":
        res = est.beta_k_estimate(ped, o.get("k", 1), line, desc)
    elif kind == "multigen":
        res = est.multigen_regression(ped, _csv_ints(o.get("lags", "1,2"), "--lags"), controls, line, desc)
    elif kind in ("sibling", "sibling_parent"):
        res = est.sibling_regression(ped, include_parent=kind == "sibling_parent")
    elif kind == "group":
        res = est.group_level_regression(ped)
    elif kind == "excess":
        res = est.excess_persistence(ped, k=o.get("k", 2), n_boot=o.get("n_boot", 400), seed=cfg.seed,
                                     line=line, descendant_generation=desc or "last")
    elif kind == "duality":
        res = est.duality_from_sample(ped, line, desc)
    else:
        res = est.sample_moments(ped, o.get("k", 4), line, desc)
    head = _header(cfg, topo=None, panel=str(o["panel"]), estimator=kind)
    # carry the generating run's model and topology when the panel records them
    src = _panel_meta(o["panel"])
    head["model"] = src.get("model")
    head["topology"] = src.get("topology")
    head["panel_seed"] = src.get("seed")
    if o.get("format") == "table":
        if not isinstance(res, est.RegressionResult):
            raise UsageError(f"estimator {kind} has no table form; use --format json")
        _write_text(cfg, "# " + json.dumps(head, sort_keys=True) + "\n" + res.to_table())
    else:
        _write_text(cfg, _json_doc(head, res))
    return EXIT_OK


def cmd_replicate(cfg: RunConfig) -> int:
    exp_id = cfg.options["experiment"]
    seed = cfg.seed if cfg.seed else None
    report = experiments.replicate(exp_id, seed)
    out = Path(cfg.output or f"replication_{exp_id}")
    out.mkdir(parents=True, exist_ok=True)
    head = run_header(seed=report.seed, model=report.params.get("model"), topology=None,
                      command="replicate", experiment=exp_id)
    emit({"header": head, "report": report.to_dict()}, out / "report.json")
    (out / "series.csv").write_text(_csv_with_header(head, report.to_csv()))
    if exp_id == "table2":
        (out / "table.txt").write_text(report.to_table())
    status = "PASS" if report.passed else "FAIL"
    print(f"{exp_id}: {status} max_abs_deviation={report.max_abs_deviation:.4f} "
          f"tolerance={report.tolerance:.4f} -> {out}")
    for name, ok in report.checks.items():
        print(f"  check {name}: {'ok' if ok else 'FAILED'}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "fit": cmd_fit,
    "regress": cmd_regress,
    "replicate": cmd_replicate,
}


def main(argv=None) -> int:
    try:
        cfg = parse_cli(argv)
    except UsageError as exc:
        for p in exc.problems:
            print(f"multigen: error: {p}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2),
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        for p in exc.problems:
            print(f"multigen: error: {p}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"multigen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (est.InfeasibleError, est.RankDeficiencyError, PreconditionError,
            ZeroDivisionError) as exc:
        print(f"multigen: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (PedigreeError, est.EstimationError, SimulationError, OSError) as exc:
        print(f"multigen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
