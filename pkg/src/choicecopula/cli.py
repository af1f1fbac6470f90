"""Batch command line: ``choicecopula {fit,test,ame,simulate,bootstrap}``.

Settings come from a YAML file; ``--set key.sub=value`` overrides single keys
(flag > file > default). Every JSON result embeds the merged configuration and
the seeds, and is written with sorted keys so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass

import numpy as np
import yaml

from .choice_model import ChoiceParams
from .data_io import Dataset, DgpConfig, Schema, load_dataset, save_dataset, simulate_dgp
from .errors import (
    ChoiceCopulaError,
    ConfigError,
    DataError,
    InternalConsistencyError,
    SchemaError,
)
from .ghk import GhkConfig
from .inference import ame_choice, ame_outcome, bootstrap_pipeline
from .joint_model import JointParams
from .pipeline import PipelineConfig, first_stage, run_pipeline
from .unobs_test import wald_rho_test, wald_statistic

FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NOT_CONVERGED = 4
EXIT_INTERNAL = 5
EXIT_REJECT = 10

ENV_THREADS = "CHOICECOPULA_THREADS"
ENV_TMPDIR = "CHOICECOPULA_TMPDIR"

log = logging.getLogger("choicecopula")

DEFAULTS = {
    "data": None,
    "dgp": None,
    # the GHK seed falls back to the master seed unless set explicitly
    "estimation": {k: v for k, v in PipelineConfig().to_dict().items() if k != "seed"},
    "bootstrap": {"replicates": 1000},
    "test": {"level": 0.05},
    "seed": 0,
    "group": None,
    "threads": 1,
}


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_override(cfg, assignment):
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key.sub=value")
    key, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    if isinstance(value, str):
        # YAML 1.1 reads "1e-6" as a string
        try:
            value = float(value)
        except ValueError:
            pass
    node = cfg
    parts = key.strip().split(".")
    for part in parts[:-1]:
        if node.get(part) is None:
            node[part] = {}
        node = node[part]
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-section")
    node[parts[-1]] = value


def load_config(path=None, overrides=(), threads=None) -> dict:
    """Merge defaults, the YAML file, the environment thread count and flags."""
    file_cfg = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                file_cfg = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a mapping")
    unknown = set(file_cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = _deep_merge(DEFAULTS, file_cfg)
    if os.environ.get(ENV_THREADS):
        cfg["threads"] = os.environ[ENV_THREADS]
    for item in overrides:
        _apply_override(cfg, item)
    if threads is not None:
        cfg["threads"] = threads
    return cfg


@dataclass
class RunConfig:
    """Validated view of a merged configuration dictionary."""

    raw: dict
    estimation: PipelineConfig
    dgp: DgpConfig | None
    data_path: str | None
    schema: Schema | None
    replicates: int
    level: float
    seed: int
    group_values: list | None
    threads: int

    @classmethod
    def from_dict(cls, cfg) -> "RunConfig":
        has_data = cfg.get("data") is not None
        has_dgp = cfg.get("dgp") is not None
        if has_data == has_dgp:
            raise ConfigError("exactly one of 'data' and 'dgp' must be given")
        seed = cfg.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer")
        est = dict(cfg.get("estimation") or {})
        est.setdefault("seed", seed)
        try:
            estimation = PipelineConfig.from_dict(est)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        dgp = None
        data_path = schema = None
        if has_dgp:
            block = dict(cfg["dgp"])
            block.setdefault("seed", seed)
            dgp = DgpConfig.from_dict(block)
            schema = dgp.schema()
        else:
            block = cfg["data"]
            if not isinstance(block, dict) or "path" not in block or "schema" not in block:
                raise ConfigError("'data' needs 'path' and 'schema'")
            data_path = str(block["path"])
            try:
                schema = Schema.from_dict(block["schema"])
            except SchemaError as exc:
                raise ConfigError(f"invalid schema: {exc}") from exc
        try:
            replicates = int(cfg["bootstrap"]["replicates"])
            level = float(cfg["test"]["level"])
            threads = int(cfg.get("threads", 1))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid bootstrap/test/threads setting: {exc}") from exc
        if replicates < 2:
            raise ConfigError("bootstrap.replicates must be at least 2")
        if not 0.0 < level < 1.0:
            raise ConfigError("test.level must lie in (0, 1)")
        if threads < 1:
            raise ConfigError("threads must be positive")
        group = cfg.get("group")
        group_values = None
        if group is not None:
            if schema.group is None:
                raise ConfigError("group filter given but the schema has no group column")
            values = group.get("values") if isinstance(group, dict) else group
            group_values = None if values in (None, "all") else list(values)
            if group_values is None:
                group_values = []
        return cls(cfg, estimation, dgp, data_path, schema, replicates, level, seed,
                   group_values, threads)

    def dataset(self) -> Dataset:
        if self.dgp is not None:
            return simulate_dgp(self.dgp)[0]
        return load_dataset(self.data_path, self.schema)

    def subsets(self, data):
        """``(label, dataset)`` pairs: the whole sample or one per group value."""
        if self.group_values is None:
            return [("all", data)]
        values = self.group_values or data.groups()
        return [(_label(v), data.filter_group(v)) for v in values]


def _label(value):
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def write_json(payload, path) -> None:
    text = json.dumps(_clean(payload), sort_keys=True, indent=2, allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def _envelope(command, run: RunConfig | None, raw_cfg, status, results, message=""):
    seeds = {}
    if run is not None:
        seeds = {
            "master_seed": run.seed,
            "ghk_seed": run.estimation.seed,
            "dgp_seed": None if run.dgp is None else run.dgp.seed,
        }
    return {
        "format_version": FORMAT_VERSION,
        "command": command,
        "status": status,
        "message": message,
        "config": raw_cfg,
        "seeds": seeds,
        "results": results,
    }


def _fit_one(data, run):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = run_pipeline(data, run.estimation)
    out = res.to_dict()
    out["n_obs"] = data.n
    out["warnings"] = sorted({str(w.message) for w in caught})
    return res, out


def cmd_fit(run: RunConfig, data):
    results = {}
    converged = True
    for label, sub in run.subsets(data):
        res, out = _fit_one(sub, run)
        results[label] = out
        converged &= res.converged
    return ("ok" if converged else "not_converged"), results, (EXIT_OK if converged else EXIT_NOT_CONVERGED)


def _test_from_results(results, level):
    reports = {}
    for label, out in results.items():
        joint = out.get("joint") if isinstance(out, dict) else None
        if not isinstance(joint, dict) or joint.get("rho_cov") is None or joint.get("rho_hat") is None:
            raise DataError(f"result for group {label!r} lacks rho_hat/rho_cov")
        try:
            rho = np.asarray(joint["rho_hat"], dtype=float)
            cov = np.asarray(joint["rho_cov"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise DataError(f"malformed rho block for group {label!r}: {exc}") from exc
        try:
            reports[label] = wald_statistic(rho, cov, level).to_dict()
        except ChoiceCopulaError as exc:
            raise DataError(f"unusable rho block for group {label!r}: {exc}") from exc
    return reports


def cmd_test(run: RunConfig, data):
    results = {}
    reject = False
    converged = True
    for label, sub in run.subsets(data):
        res, _ = _fit_one(sub, run)
        report = wald_rho_test(res.joint_fit, run.level)
        out = report.to_dict()
        out["fit_converged"] = res.converged
        results[label] = out
        reject |= report.reject
        converged &= res.converged
    if not converged:
        return "not_converged", results, EXIT_NOT_CONVERGED
    return ("reject" if reject else "fail_to_reject"), results, (EXIT_REJECT if reject else EXIT_OK)


def _choice_params_from(d) -> ChoiceParams:
    g = d["ghk"]
    return ChoiceParams(np.asarray(d["beta"], float), int(d["base"]), d["kernel"],
                        GhkConfig(int(g["num_draws"]), bool(g["antithetic"]), int(g["master_seed"])),
                        float(d["a"]), tuple(d.get("z_names", ())))


def _ame_one(data, fit_block=None, run=None):
    if fit_block is None:
        res, _ = _fit_one(data, run)
        joint, choice, outcomes = res.joint_fit, res.choice_fit, res.outcomes
    else:
        _, _, outcomes = first_stage(data)
        cparams = _choice_params_from(fit_block["choice"]["params"])
        jp = fit_block["joint"]["params"]
        params = JointParams(jp["gamma"], jp["tau"], jp["rho_raw"], beta_ref=cparams)
        joint = _StoredFit(params)
        choice = _StoredFit(cparams)
    return {
        "outcome": ame_outcome(joint, data, outcomes).to_dict(),
        "choice": ame_choice(choice, data, outcomes).to_dict(),
    }


@dataclass
class _StoredFit:
    params: object


def cmd_ame(run: RunConfig, data, prior=None):
    results = {}
    for label, sub in run.subsets(data):
        block = None
        if prior is not None:
            block = prior.get(label)
            if not isinstance(block, dict):
                raise DataError(f"prior result has no group {label!r}")
        results[label] = _ame_one(sub, block, run)
    return "ok", results, EXIT_OK


def cmd_bootstrap(run: RunConfig, data):
    results = {}
    flagged = False
    for label, sub in run.subsets(data):
        res, out = _fit_one(sub, run)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            boot = bootstrap_pipeline(sub, run.estimation, run.replicates, run.seed,
                                      n_jobs=run.threads, init=res)
        results[label] = {"fit": out, "bootstrap": boot.to_dict()}
        flagged |= boot.reliability_warning
    return ("unreliable" if flagged else "ok"), results, EXIT_OK


def cmd_simulate(run: RunConfig, out_path, truth_path=None):
    if run.dgp is None:
        raise ConfigError("simulate needs a 'dgp' block")
    data, truth = simulate_dgp(run.dgp)
    save_dataset(data, out_path)
    if truth_path is not None:
        truth.save(truth_path)
    return data


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choicecopula", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config key (dotted path)")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", required=True, help="output file")

    common(sub.add_parser("fit", help="estimate all stages"))
    p = sub.add_parser("test", help="Wald test of zero copula correlations")
    common(p, config_required=False)
    p.add_argument("--result", help="prior fit result (JSON) to test instead of refitting")
    p = sub.add_parser("ame", help="average marginal effects")
    common(p, config_required=False)
    p.add_argument("--result", help="prior fit result (JSON) providing the estimates")
    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    common(p)
    p.add_argument("--truth", help="where to write the latent draws (.npz)")
    common(sub.add_parser("bootstrap", help="nonparametric bootstrap of the pipeline"))
    return parser


def _read_prior(path):
    try:
        with open(path, encoding="utf-8") as fh:
            prior = json.load(fh)
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read result file {path}: {exc}") from exc
    if not isinstance(prior, dict) or not isinstance(prior.get("results"), dict):
        raise DataError(f"{path} is not a result file")
    if prior.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path} has unsupported format_version {prior.get('format_version')!r}")
    return prior


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if os.environ.get(ENV_TMPDIR):
        os.environ.setdefault("JOBLIB_TEMP_FOLDER", os.environ[ENV_TMPDIR])
    raw_cfg = None
    run = None
    try:
        prior = None
        result_path = getattr(args, "result", None)
        if result_path is not None:
            prior = _read_prior(result_path)
            raw_cfg = prior.get("config")
            if not isinstance(raw_cfg, dict):
                raise DataError(f"{result_path} carries no config echo")
            for item in args.overrides:
                _apply_override(raw_cfg, item)
        elif args.config is None:
            raise ConfigError("either --config or --result is required")
        else:
            raw_cfg = load_config(args.config, args.overrides, args.threads)
        run = RunConfig.from_dict(raw_cfg)
        if args.command == "simulate":
            data = cmd_simulate(run, args.out, args.truth)
            log.info("wrote %d rows to %s", data.n, args.out)
            return EXIT_OK
        if args.command == "test" and prior is not None:
            reports = _test_from_results(prior["results"], run.level)
            reject = any(r["p_value"] < r["reject_at"] for r in reports.values())
            status, results, code = ("reject" if reject else "fail_to_reject"), reports, (
                EXIT_REJECT if reject else EXIT_OK)
        else:
            data = run.dataset()
            if args.command == "fit":
                status, results, code = cmd_fit(run, data)
            elif args.command == "test":
                status, results, code = cmd_test(run, data)
            elif args.command == "ame":
                status, results, code = cmd_ame(run, data, None if prior is None else prior["results"])
            else:
                status, results, code = cmd_bootstrap(run, data)
        write_json(_envelope(args.command, run, raw_cfg, status, results), args.out)
        return code
    except ConfigError as exc:
        code, status, error = EXIT_CONFIG, "config_error", exc
    except DataError as exc:
        code, status, error = EXIT_DATA, "data_error", exc
    except InternalConsistencyError as exc:
        code, status, error = EXIT_INTERNAL, "internal_error", exc
    except ChoiceCopulaError as exc:
        code, status, error = EXIT_DATA, "error", exc
    except Exception as exc:  # noqa: BLE001 - any other failure is a defect
        log.debug("unexpected failure", exc_info=True)
        code, status, error = EXIT_INTERNAL, "internal_error", exc
    print(f"choicecopula {args.command}: {error}", file=sys.stderr)
    if args.command != "simulate":
        try:
            write_json(_envelope(args.command, run, raw_cfg, status, {}, str(error)), args.out)
        except (OSError, TypeError, ValueError):
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
