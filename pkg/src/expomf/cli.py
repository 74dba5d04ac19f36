"""Command line entry point.

Five subcommands cover the full workflow:

  ingest    raw triples -> filtered, split, canonical dataset directory
  train     dataset directory -> checkpoint + per-iteration metrics log
  evaluate  checkpoint + dataset -> ranking metric report
  synth     generative settings -> sampled dataset directory + ground truth
  recover   synthetic dataset -> fit + recovery report against ground truth

Options resolve with precedence flags > config file > defaults; the config
file is flat ``key = value`` text using the flag names with underscores.
Every run writes a manifest recording the fully resolved options and a
sha256 of each input file, so a run can be reproduced from its output
directory alone. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import json
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, em, metrics
from . import data as data_mod
from . import synthetic as synth_mod
from .errors import ConfigurationError, DataError, ExpomfError, NumericalError
from .state import Hyperparameters, init_model, load_checkpoint, save_checkpoint
from .wmf import WmfConfig, initial_state as wmf_initial_state

VARIANTS = ("wmf", "expomf-fixed", "expomf-peritem", "expomf-covariate")

_HYPER_DEFAULTS = {
    "n_factors": 100,
    "lambda_theta": 1e-2,
    "lambda_beta": 1e-2,
    "lambda_y": 1.0,
    "alpha1": 1.0,
    "alpha2": 1.0,
    "init_scale": 0.01,
    "mu": 0.1,
    "c0": 0.01,
    "c1": 1.0,
    "step_size": 0.5,
    "batch_size": 10,
    "epochs_per_m_step": 10,
    "user_bias": True,
    "n_clusters": 10,
    "max_iters": 20,
    "stop_metric": "",
    "patience": 3,
    "seed": 0,
    "threads": 1,
}

DEFAULTS: dict[str, dict] = {
    "ingest": {
        "format": "tsv",
        "min_user_items": 20,
        "min_item_users": 50,
        "proportions": "0.7,0.2,0.1",
        "seed": 0,
        "covariates": "",
        "locations": "",
    },
    "train": dict(_HYPER_DEFAULTS, variant="expomf-peritem", covariates=""),
    "evaluate": {
        "recall_ks": "20,50",
        "rank_k": 100,
        "rule": "",
        "covariates": "",
    },
    "synth": {
        "n_users": 500,
        "n_items": 400,
        "n_factors": 10,
        "n_covariates": 10,
        "exposure_process": "popularity",
        "mu": 0.1,
        "alpha1": 1.0,
        "alpha2": 3.0,
        "strength": 4.0,
        "bias": -2.0,
        "lambda_theta": 1.0,
        "lambda_beta": 1.0,
        "lambda_y": 1.0,
        "observation_mode": "binarized",
        "target_density": 0.02,
        "proportions": "0.7,0.2,0.1",
        "seed": 0,
    },
    "recover": dict(_HYPER_DEFAULTS, variant="expomf-peritem", covariates="", rank_k=100),
}


@dataclasses.dataclass
class RunConfig:
    """A command plus its fully resolved option map."""

    command: str
    options: dict

    def __getattr__(self, name):
        try:
            return self.options[name]
        except KeyError:
            raise AttributeError(name) from None


def _coerce(key: str, raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigurationError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(
            f"config key {key}: expected {type(default).__name__}, got {raw!r}"
        ) from None
    return raw


def read_config_file(path) -> dict[str, str]:
    """Flat key = value lines; '#' starts a comment; blank lines ignored."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigurationError(
                    f"{path}: line {line_no}: expected key = value, got {line.rstrip()!r}"
                )
            key, _, value = text.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve_config(command: str, args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config-file values, and flags (flags win)."""
    defaults = DEFAULTS[command]
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        _require_file(config_path, "config")
        for key, raw in read_config_file(config_path).items():
            if key not in defaults:
                raise ConfigurationError(
                    f"config key {key!r} is not an option of the {command} command"
                )
            resolved[key] = _coerce(key, raw, defaults[key])
    for key in defaults:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
    for key in ("input", "data", "output", "checkpoint", "grid"):
        if hasattr(args, key):
            resolved[key] = getattr(args, key)
    return RunConfig(command=command, options=resolved)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"{what} path is not a readable file: {p}")
    return p


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigurationError(f"{what} directory does not exist: {p}")
    return p


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, config: RunConfig, inputs: dict[str, Path]) -> None:
    lines = [f"command = {config.command}", f"version = {__version__}"]
    for key in sorted(config.options):
        value = config.options[key]
        if value in ("", None):
            continue
        lines.append(f"{key} = {value}")
    for name in sorted(inputs):
        lines.append(f"input_sha256.{name} = {_sha256(inputs[name])}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_proportions(text: str) -> tuple[float, float, float]:
    parts = [p for p in str(text).split(",") if p.strip()]
    if len(parts) != 3:
        raise ConfigurationError(
            f"proportions must be three comma-separated numbers, got {text!r}"
        )
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError:
        raise ConfigurationError(f"proportions must be numeric, got {text!r}") from None


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.options["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def _cmd_ingest(config: RunConfig) -> int:
    inputs = {"interactions": _require_file(config.input, "input")}
    raw = data_mod.load_interactions(config.input, fmt=config.format)
    matrix = data_mod.filter_and_binarize(
        raw, min_user_items=config.min_user_items, min_item_users=config.min_item_users
    )
    split = data_mod.split_interactions(
        matrix, proportions=_parse_proportions(config.proportions), seed=config.seed
    )
    out = _out_dir(config)
    data_mod.write_dataset(out, split)
    for key, name in (("covariates", "covariates.txt"), ("locations", "locations.txt")):
        path = config.options[key]
        if path:
            inputs[key] = _require_file(path, key)
            if key == "covariates":
                data_mod.load_covariates(path, matrix.item_ids)
            else:
                data_mod.load_locations(path, matrix.item_ids)
            shutil.copyfile(path, out / name)
    write_manifest(out, config, inputs)
    print(
        f"ingested {len(raw)} raw rows -> {matrix.n_users} users x "
        f"{matrix.n_items} items, {matrix.nnz} interactions "
        f"(train {split.train.nnz}, validation {split.validation.nnz}, "
        f"test {split.test.nnz})"
    )
    print(f"wrote {out}")
    return 0


def _resolve_covariates(
    config: RunConfig, data_dir: Path, data: data_mod.SplitDataset, inputs: dict
) -> np.ndarray:
    """Find the covariate matrix for a covariate-variant run.

    Search order: the --covariates flag (text or .npy), covariates.txt in
    the dataset directory, then locations.txt clustered into n_clusters
    groups. Text covariates are aligned by item id; .npy files are taken
    as already aligned.
    """
    explicit = config.options.get("covariates", "")
    item_ids = data.train.item_ids
    if explicit:
        path = _require_file(explicit, "covariates")
        inputs["covariates"] = path
        if path.suffix == ".npy":
            values = np.load(path)
            if values.shape[0] != len(item_ids):
                raise DataError(
                    f"{path}: has {values.shape[0]} rows, dataset has {len(item_ids)} items"
                )
            return np.asarray(values, dtype=np.float64)
        return data_mod.load_covariates(path, item_ids).values
    cov_path = data_dir / "covariates.txt"
    if cov_path.is_file():
        inputs["covariates"] = cov_path
        return data_mod.load_covariates(cov_path, item_ids).values
    loc_path = data_dir / "locations.txt"
    if loc_path.is_file():
        inputs["locations"] = loc_path
        coords = data_mod.load_locations(loc_path, item_ids)
        return data_mod.cluster_locations(coords, config.n_clusters, seed=config.seed)
    raise ConfigurationError(
        "variant expomf-covariate requires the covariates field: pass --covariates "
        "or provide covariates.txt / locations.txt in the dataset directory"
    )


def _build_state(config: RunConfig, data: data_mod.SplitDataset, covariates):
    hyper = Hyperparameters(
        n_factors=config.n_factors,
        lambda_theta=config.lambda_theta,
        lambda_beta=config.lambda_beta,
        lambda_y=config.lambda_y,
        alpha1=config.alpha1,
        alpha2=config.alpha2,
        init_scale=config.init_scale,
        seed=config.seed,
    )
    U, I = data.n_users, data.n_items
    variant = config.variant
    if variant == "wmf":
        wmf_config = WmfConfig(
            n_factors=config.n_factors,
            lambda_theta=config.lambda_theta,
            lambda_beta=config.lambda_beta,
            c0=config.c0,
            c1=config.c1,
            seed=config.seed,
            init_scale=config.init_scale,
        )
        return wmf_initial_state(data.train, wmf_config)
    if variant == "expomf-fixed":
        return init_model(U, I, hyper, variant="fixed", mu=config.mu)
    if variant == "expomf-peritem":
        return init_model(U, I, hyper, variant="per_item")
    if variant == "expomf-covariate":
        return init_model(
            U,
            I,
            hyper,
            variant="covariate",
            covariates=covariates,
            step_size=config.step_size,
            batch_size=config.batch_size,
            epochs_per_m_step=config.epochs_per_m_step,
            user_bias=config.user_bias,
        )
    raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")


def _train_once(config: RunConfig, data: data_mod.SplitDataset, covariates):
    state = _build_state(config, data, covariates)
    stop = config.stop_metric or (
        "validation_ndcg_at_100"
        if data.validation.nnz > 0
        else "marginal_log_posterior"
    )
    train_config = em.TrainConfig(
        max_iters=config.max_iters, stop_metric=stop, patience=config.patience
    )
    best, records = em.train(state, data, train_config, n_jobs=config.threads)
    return best, records, stop


def _grid_values(specs: list[str], command: str) -> list[tuple[str, list]]:
    axes = []
    for spec_text in specs:
        if "=" not in spec_text:
            raise ConfigurationError(f"--grid expects key=v1,v2,..., got {spec_text!r}")
        key, _, values = spec_text.partition("=")
        key = key.strip().replace("-", "_")
        if key not in DEFAULTS[command]:
            raise ConfigurationError(f"--grid key {key!r} is not a {command} option")
        default = DEFAULTS[command][key]
        axes.append((key, [_coerce(key, v.strip(), default) for v in values.split(",")]))
    return axes


def _cmd_train(config: RunConfig) -> int:
    data_dir = _require_dir(config.data, "data")
    inputs = {
        name: data_dir / name
        for name in ("train.tsv", "validation.tsv", "test.tsv", "users.txt", "items.txt")
        if (data_dir / name).is_file()
    }
    data = data_mod.read_dataset(data_dir)
    covariates = None
    if config.variant == "expomf-covariate":
        covariates = _resolve_covariates(config, data_dir, data, inputs)
    out = _out_dir(config)

    grid_specs = config.options.get("grid") or []
    if grid_specs:
        axes = _grid_values(grid_specs, "train")
        rows = []
        best_value, best_state, best_combo = -np.inf, None, None
        for combo in itertools.product(*(values for _, values in axes)):
            run_options = dict(config.options)
            run_options.update({key: v for (key, _), v in zip(axes, combo)})
            run = RunConfig(command="train", options=run_options)
            state, records, stop = _train_once(run, data, covariates)
            value = max(r[stop] for r in records)
            rows.append((combo, value))
            if value > best_value:
                best_value, best_state, best_combo = value, state, combo
        header = "\t".join(key for key, _ in axes)
        lines = [f"{header}\t{stop}"]
        for combo, value in rows:
            lines.append("\t".join(str(v) for v in combo) + f"\t{value:.6f}")
        (out / "grid.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        save_checkpoint(best_state, out / "checkpoint.bin")
        if covariates is not None:
            np.save(out / "covariates.npy", covariates)
        write_manifest(out, config, inputs)
        print(f"grid searched {len(rows)} settings on {stop}")
        print(
            "best: "
            + ", ".join(f"{key}={v}" for (key, _), v in zip(axes, best_combo))
            + f" -> {best_value:.6f}"
        )
        print(f"wrote {out / 'checkpoint.bin'} and {out / 'grid.tsv'}")
        return 0

    best, records, stop = _train_once(config, data, covariates)
    save_checkpoint(best, out / "checkpoint.bin")
    if covariates is not None:
        np.save(out / "covariates.npy", covariates)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    write_manifest(out, config, inputs)
    best_record = max(records, key=lambda r: r[stop])
    print(
        f"trained {config.variant} (K={config.n_factors}) for {len(records)} iterations, "
        f"kept iteration {best_record['iteration']} ({stop} = {best_record[stop]:.6f})"
    )
    print(f"wrote {out / 'checkpoint.bin'}")
    return 0


def _cmd_evaluate(config: RunConfig) -> int:
    data_dir = _require_dir(config.data, "data")
    checkpoint_path = _require_file(config.checkpoint, "checkpoint")
    inputs = {"checkpoint": checkpoint_path}
    data = data_mod.read_dataset(data_dir)
    try:
        state = load_checkpoint(checkpoint_path)
    except ConfigurationError as err:
        if "covariate" not in str(err):
            raise
        covariates = _evaluate_covariates(config, checkpoint_path, data_dir, data, inputs)
        state = load_checkpoint(checkpoint_path, covariates=covariates)
    recall_ks = tuple(
        int(k) for k in str(config.recall_ks).split(",") if k.strip()
    )
    report = metrics.evaluate(
        state,
        data,
        recall_ks=recall_ks,
        rank_k=config.rank_k,
        rule=config.rule or None,
    )
    out = _out_dir(config)
    header = (
        f"model: {state.exposure.variant}, K={state.hyper.n_factors}, "
        f"iteration {state.iteration}"
    )
    body = report.summary()
    print(header)
    print(body)
    (out / "report.txt").write_text(header + "\n" + body + "\n", encoding="utf-8")
    (out / "per_user.tsv").write_text(
        report.to_table(data.train.user_ids), encoding="utf-8"
    )
    write_manifest(out, config, inputs)
    return 0


def _evaluate_covariates(
    config: RunConfig, checkpoint_path: Path, data_dir: Path, data, inputs: dict
) -> np.ndarray:
    """Covariates for loading a covariate checkpoint: flag, then the .npy
    saved next to the checkpoint at train time, then the dataset's text file."""
    explicit = config.options.get("covariates", "")
    if explicit:
        path = _require_file(explicit, "covariates")
        inputs["covariates"] = path
        if path.suffix == ".npy":
            return np.asarray(np.load(path), dtype=np.float64)
        return data_mod.load_covariates(path, data.train.item_ids).values
    sibling = checkpoint_path.parent / "covariates.npy"
    if sibling.is_file():
        inputs["covariates"] = sibling
        return np.asarray(np.load(sibling), dtype=np.float64)
    text = data_dir / "covariates.txt"
    if text.is_file():
        inputs["covariates"] = text
        return data_mod.load_covariates(text, data.train.item_ids).values
    raise ConfigurationError(
        "checkpoint uses covariate exposure; pass --covariates or keep "
        "covariates.npy next to the checkpoint"
    )


def _cmd_synth(config: RunConfig) -> int:
    process = config.exposure_process
    spec_kwargs = dict(
        n_users=config.n_users,
        n_items=config.n_items,
        n_factors=config.n_factors,
        lambda_theta=config.lambda_theta,
        lambda_beta=config.lambda_beta,
        lambda_y=config.lambda_y,
        exposure_process=process,
        mu=config.mu,
        alpha1=config.alpha1,
        alpha2=config.alpha2,
        observation_mode=config.observation_mode,
        target_density=config.target_density,
        seed=config.seed,
    )
    if process == "covariate":
        psi, gamma, x = synth_mod.clustered_exposure_truth(
            config.n_users,
            config.n_items,
            config.n_covariates,
            strength=config.strength,
            bias=config.bias,
            seed=config.seed,
        )
        spec_kwargs.update(psi=psi, gamma=gamma, covariates=x)
    spec = synth_mod.SyntheticSpec(**spec_kwargs)
    matrix, truth = synth_mod.sample_dataset(spec)
    if matrix.nnz == 0:
        raise DataError("sampled dataset has no interactions; raise target_density or mu")
    split = data_mod.split_interactions(
        matrix, proportions=_parse_proportions(config.proportions), seed=config.seed
    )
    out = _out_dir(config)
    data_mod.write_dataset(out, split)
    synth_mod.save_ground_truth(out / "truth.npz", truth)
    if process == "covariate":
        with open(out / "covariates.txt", "w", encoding="utf-8") as fh:
            for item_id, row in zip(matrix.item_ids, spec.covariates):
                fh.write("\t".join([item_id] + [repr(float(v)) for v in row]) + "\n")
    write_manifest(out, config, {})
    density = matrix.nnz / (config.n_users * config.n_items)
    print(
        f"sampled {config.n_users} users x {config.n_items} items "
        f"({process} exposure, {config.observation_mode} observations), "
        f"{matrix.nnz} interactions, density {density:.4f}"
    )
    print(f"wrote {out}")
    return 0


def _cmd_recover(config: RunConfig) -> int:
    data_dir = _require_dir(config.data, "data")
    truth_path = _require_file(data_dir / "truth.npz", "ground truth")
    inputs = {"truth": truth_path}
    data = data_mod.read_dataset(data_dir)
    truth = synth_mod.load_ground_truth(truth_path)
    covariates = None
    if config.variant == "expomf-covariate":
        covariates = _resolve_covariates(config, data_dir, data, inputs)
    best, records, stop = _train_once(config, data, covariates)
    report = synth_mod.recovery_report(best, truth, data, rank_k=config.rank_k)
    out = _out_dir(config)
    save_checkpoint(best, out / "checkpoint.bin")
    if covariates is not None:
        np.save(out / "covariates.npy", covariates)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    header = f"variant: {config.variant}, K={config.n_factors}, stop metric: {stop}"
    body = report.summary()
    (out / "recovery.txt").write_text(header + "\n" + body + "\n", encoding="utf-8")
    write_manifest(out, config, inputs)
    print(header)
    print(body)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_option(parser, key, default, help_text=""):
    flag = "--" + key.replace("_", "-")
    if isinstance(default, bool):
        parser.add_argument(flag, action=argparse.BooleanOptionalAction, default=None, help=help_text)
    elif isinstance(default, int):
        parser.add_argument(flag, type=int, default=None, help=help_text)
    elif isinstance(default, float):
        parser.add_argument(flag, type=float, default=None, help=help_text)
    else:
        parser.add_argument(flag, type=str, default=None, help=help_text)


_HELP = {
    "variant": "model variant: " + " | ".join(VARIANTS),
    "n_factors": "latent dimension",
    "stop_metric": "validation_ndcg_at_100 or marginal_log_posterior",
    "threads": "worker threads for factor updates (never changes results)",
    "proportions": "train,test,validation fractions, e.g. 0.7,0.2,0.1",
    "exposure_process": "constant | popularity | covariate",
    "observation_mode": "gaussian | binarized",
    "covariates": "item covariate file (text rows or .npy)",
    "locations": "item location file (coordinates per item)",
    "n_clusters": "clusters when deriving covariates from locations",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expomf",
        description="Exposure-aware matrix factorization for implicit feedback.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    specs = {
        "ingest": "filter, binarize, and split a raw interaction file",
        "train": "fit a model on an ingested dataset directory",
        "evaluate": "rank heldout items and report metrics",
        "synth": "sample a dataset from the generative model",
        "recover": "fit on synthetic data and score recovery of the truth",
    }
    parsers = {}
    for name, description in specs.items():
        p = sub.add_parser(name, help=description, description=description)
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--output", required=True, help="output directory")
        for key, default in DEFAULTS[name].items():
            _add_option(p, key, default, _HELP.get(key, ""))
        parsers[name] = p

    parsers["ingest"].add_argument("--input", required=True, help="raw interaction triples")
    for name in ("train", "evaluate", "recover"):
        parsers[name].add_argument("--data", required=True, help="dataset directory")
    parsers["evaluate"].add_argument("--checkpoint", required=True, help="model checkpoint")
    parsers["train"].add_argument(
        "--grid",
        action="append",
        default=None,
        metavar="KEY=V1,V2",
        help="grid-search a hyperparameter over listed values (repeatable)",
    )
    return parser


_COMMANDS = {
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "synth": _cmd_synth,
    "recover": _cmd_recover,
}


def run(config: RunConfig) -> int:
    """Execute a resolved command; raises the package's error types."""
    return _COMMANDS[config.command](config)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        status = run(resolve_config(args.command, args))
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except (DataError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except ExpomfError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"done in {time.time() - started:.1f}s")
    return status


if __name__ == "__main__":
    sys.exit(main())
