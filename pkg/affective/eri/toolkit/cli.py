#
# Copyright 2026 ERI Toolkit Developers
#
# The source code of this program is made available
# under the terms of the GNU Affero General Public License version 3
# (GNU AGPL V3) as published by the Free Software Foundation.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public
# License along with this program; if not, see
# <http://www.gnu.org/licenses/>.

"""
``eri-toolkit`` command line: synth, train, eval, tune, ensemble, labelcorr
and combos. Every command writes ``run_summary.json`` into its output
directory, also when it fails with a data or compute error.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime or
numerical error.
"""

import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import argh

from .config import SUMMARY_FILENAME, RunConfig
from .encoders import FusionMode, load_checkpoint, save_checkpoint
from .ensembler import EnsembleSpec, ensemble_predict, incremental_report, write_incremental_csv
from .exceptions import ComputeError, ConfigError, EriToolkitError
from .featstore import gen_synthetic, read_manifest
from .objectives import LossKind, label_corr_matrix, write_corr_csv
from .trainer import compare_feature_sets, evaluate, predict, split_labels, train
from .trainer import write_feature_sets_csv
from .tuner import run_search

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

logger = logging.getLogger(__name__)

CommandBody = Callable[[RunConfig, Path, Dict[str, Any]], None]


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _error(exc: Exception, field: Optional[str] = None, path: Optional[str] = None) -> Dict:
    return {"field": field, "message": str(exc), "path": path, "type": exc.__class__.__name__}


def _execute(config: RunConfig, body: CommandBody) -> int:
    resolved = config.resolved()
    run_id = resolved["run_id"]
    summary: Dict[str, Any] = {
        "artifacts": {},
        "command": config.command,
        "config": resolved,
        "exit_code": 0,
        "run_id": run_id,
        "seed": config.seed,
        "status": "ok",
    }
    out_dir = config.out_path
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        logger.error("[%s] Output directory %r is not writable: %s", run_id[:10], str(out_dir), exc)
        return ConfigError.exit_code
    try:
        body(config, out_dir, summary)
    except EriToolkitError as exc:
        error = _error(exc, exc.field, exc.path)
        summary.update(exit_code=exc.exit_code, status="error", error=error)
        logger.error("[%s] %s failed: %s", run_id[:10], config.command, exc)
    except Exception as exc:
        summary.update(exit_code=ComputeError.exit_code, status="error", error=_error(exc))
        logger.exception("[%s] %s crashed: %s", run_id[:10], config.command, exc)
    _write_json(out_dir / SUMMARY_FILENAME, summary)
    if summary["exit_code"] == 0:
        logger.info("[%s] %s finished, artifacts in %r.", run_id[:10], config.command, str(out_dir))
    return summary["exit_code"]


def _synth(config: RunConfig, out_dir: Path, summary: Dict[str, Any]) -> None:
    data_dir = config.manifest_path.parent
    manifest = gen_synthetic(config.synth_spec(), config.seed, data_dir)
    summary["artifacts"]["manifest"] = str(config.manifest_path)
    summary["samples"] = len(manifest)


def _train(config: RunConfig, out_dir: Path, summary: Dict[str, Any]) -> None:
    manifest = read_manifest(config.manifest_path, retries=config.data_retries)
    checkpoint, history = train(
        manifest,
        config.hyperparams(),
        config.seed,
        filter_faces=config.filter_faces,
        retries=config.data_retries,
        run_id=config.effective_run_id,
    )
    checkpoint_path = config.checkpoint_path
    save_checkpoint(checkpoint, checkpoint_path)
    history_path = out_dir / "history.jsonl"
    history.write(history_path)
    summary["artifacts"].update(checkpoint=str(checkpoint_path), history=str(history_path))
    summary["best_epoch"] = history.best_epoch
    summary["val_mean_pcc"] = history.best.val_mean_pcc


def _eval(config: RunConfig, out_dir: Path, summary: Dict[str, Any]) -> None:
    manifest = read_manifest(config.manifest_path, retries=config.data_retries)
    checkpoint = load_checkpoint(config.checkpoint_path, retries=config.data_retries)
    report = evaluate(checkpoint, manifest, config.split, retries=config.data_retries)
    table = predict(checkpoint, manifest, config.split, retries=config.data_retries)
    metrics_path = out_dir / "metrics.json"
    predictions_path = out_dir / f"predictions_{config.split}.csv"
    _write_json(metrics_path, report.as_dict())
    table.write_csv(predictions_path)
    summary["artifacts"].update(metrics=str(metrics_path), predictions=str(predictions_path))
    summary["metrics"] = report.as_dict()


def _tune(config: RunConfig, out_dir: Path, summary: Dict[str, Any]) -> None:
    manifest = read_manifest(config.manifest_path, retries=config.data_retries)
    result = run_search(
        manifest,
        config.search_space(),
        config.seed,
        parallelism=config.parallelism,
        filter_faces=config.filter_faces,
        retries=config.data_retries,
    )
    records_path = out_dir / "trials.jsonl"
    search_path = out_dir / "search_summary.json"
    result.write(records_path, search_path)
    summary["artifacts"].update(trials=str(records_path), search_summary=str(search_path))
    best = result.best
    best_path = out_dir / "best_checkpoint.eric"
    save_checkpoint(result.checkpoints[best.trial_id], best_path)
    summary["artifacts"]["best_checkpoint"] = str(best_path)
    summary["best_trial_id"] = best.trial_id
    summary["best_score"] = best.final_score


def _ensemble(config: RunConfig, out_dir: Path, summary: Dict[str, Any]) -> None:
    manifest = read_manifest(config.manifest_path, retries=config.data_retries)
    spec = EnsembleSpec(
        tuple(config.checkpoints),
        weights=tuple(config.weights) if config.weights else None,
    )
    table = ensemble_predict(spec, manifest, config.split, retries=config.data_retries)
    predictions_path = out_dir / f"ensemble_predictions_{config.split}.csv"
    table.write_csv(predictions_path)
    rows = incremental_report(spec, manifest, config.split, retries=config.data_retries)
    report_path = out_dir / "ensemble_report.csv"
    write_incremental_csv(rows, report_path)
    summary["artifacts"].update(predictions=str(predictions_path), report=str(report_path))
    summary["mean_pcc"] = rows[-1].mean_pcc


def _labelcorr(config: RunConfig, out_dir: Path, summary: Dict[str, Any]) -> None:
    manifest = read_manifest(config.manifest_path, retries=config.data_retries)
    matrix = label_corr_matrix(split_labels(manifest, "train"))
    corr_path = out_dir / "label_corr.csv"
    write_corr_csv(matrix, corr_path, config.emotion_names)
    summary["artifacts"]["label_corr"] = str(corr_path)


def _combos(config: RunConfig, out_dir: Path, summary: Dict[str, Any]) -> None:
    manifest = read_manifest(config.manifest_path, retries=config.data_retries)
    hp = config.hyperparams()
    streams = config.streams or sorted(m for m in manifest.dims if m != hp.audio_stream)
    results = compare_feature_sets(
        manifest,
        hp,
        streams,
        config.seed,
        filter_faces=config.filter_faces,
        retries=config.data_retries,
    )
    combos_path = out_dir / "feature_sets.csv"
    write_feature_sets_csv(results, combos_path)
    summary["artifacts"]["feature_sets"] = str(combos_path)


def cmd_synth(config: RunConfig) -> int:
    return _execute(config, _synth)


def cmd_train(config: RunConfig) -> int:
    return _execute(config, _train)


def cmd_eval(config: RunConfig) -> int:
    return _execute(config, _eval)


def cmd_tune(config: RunConfig) -> int:
    return _execute(config, _tune)


def cmd_ensemble(config: RunConfig) -> int:
    return _execute(config, _ensemble)


def cmd_labelcorr(config: RunConfig) -> int:
    return _execute(config, _labelcorr)


def cmd_combos(config: RunConfig) -> int:
    return _execute(config, _combos)


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "tune": cmd_tune,
    "ensemble": cmd_ensemble,
    "labelcorr": cmd_labelcorr,
    "combos": cmd_combos,
}


def run_command(command: str, config_file: Optional[str], overrides: Dict[str, Any]) -> int:
    """Resolve the configuration of ``command`` and run it; return the exit code."""
    try:
        config = RunConfig.load(command, config_file, overrides)
    except ConfigError as exc:
        logging.basicConfig(format=LOG_FORMAT, level=logging.INFO)
        logger.error("Invalid configuration: %s", exc)
        return exc.exit_code
    logging.basicConfig(format=LOG_FORMAT, level=config.log_level)
    return COMMANDS[command](config)


def _dispatch(command: str, config: Optional[str], **flags) -> None:
    overrides = {
        "paths.manifest": flags.get("manifest"),
        "paths.out_dir": flags.get("out"),
        "paths.checkpoint": flags.get("checkpoint"),
        "paths.checkpoints": flags.get("checkpoints") or None,
        "seed": flags.get("seed"),
        "parallelism": flags.get("parallelism"),
        "split": flags.get("split"),
        "log_level": flags.get("log_level"),
        "hp.loss_kind": flags.get("loss"),
        "hp.fusion_mode": flags.get("fusion"),
        "hp.architecture": flags.get("architecture"),
        "search.trials": flags.get("trials"),
        "combos.streams": flags.get("streams") or None,
        "train.filter_faces": False if flags.get("no_filter_faces") else None,
    }
    raise SystemExit(run_command(command, config, overrides))


_LOSSES = [e.value for e in LossKind]
_FUSIONS = [e.value for e in FusionMode]


def _common(func):
    for decorator in (
        argh.arg("--config", help="JSON config file with flat dotted keys"),
        argh.arg("--manifest", help="dataset manifest (default: <out>/data/manifest.jsonl)"),
        argh.arg("--out", help="output directory"),
        argh.arg("--seed", type=int, help="random seed"),
        argh.arg("--log-level", help="logging verbosity"),
    ):
        func = decorator(func)
    return func


def _model(func):
    for decorator in (
        argh.arg("--loss", choices=_LOSSES, help="training loss"),
        argh.arg("--fusion", choices=_FUSIONS, help="modality fusion mode"),
        argh.arg("--architecture", choices=["te", "resnet1d"], help="model architecture"),
        argh.arg("--no-filter-faces", help="train on all samples, including those without faces"),
    ):
        func = decorator(func)
    return func


@_common
def synth(config=None, manifest=None, out=None, seed=None, log_level=None):
    """Write a synthetic dataset."""
    _dispatch("synth", config, manifest=manifest, out=out, seed=seed, log_level=log_level)


@_common
@_model
def train_model(
    config=None,
    manifest=None,
    out=None,
    seed=None,
    log_level=None,
    loss=None,
    fusion=None,
    architecture=None,
    no_filter_faces=False,
):
    """Train a model and save its best checkpoint."""
    _dispatch(
        "train",
        config,
        manifest=manifest,
        out=out,
        seed=seed,
        log_level=log_level,
        loss=loss,
        fusion=fusion,
        architecture=architecture,
        no_filter_faces=no_filter_faces,
    )


@_common
@argh.arg("--checkpoint", help="checkpoint file (default: <out>/checkpoint.eric)")
@argh.arg("--split", help="split to evaluate")
def evaluate_model(
    config=None, manifest=None, out=None, seed=None, log_level=None, checkpoint=None, split=None
):
    """Evaluate a checkpoint and export its predictions."""
    _dispatch(
        "eval",
        config,
        manifest=manifest,
        out=out,
        seed=seed,
        log_level=log_level,
        checkpoint=checkpoint,
        split=split,
    )


@_common
@_model
@argh.arg("--trials", type=int, help="number of trials")
@argh.arg("--parallelism", type=int, help="trials trained concurrently")
def tune(
    config=None,
    manifest=None,
    out=None,
    seed=None,
    log_level=None,
    loss=None,
    fusion=None,
    architecture=None,
    no_filter_faces=False,
    trials=None,
    parallelism=None,
):
    """Random hyperparameter search with successive halving."""
    _dispatch(
        "tune",
        config,
        manifest=manifest,
        out=out,
        seed=seed,
        log_level=log_level,
        loss=loss,
        fusion=fusion,
        architecture=architecture,
        no_filter_faces=no_filter_faces,
        trials=trials,
        parallelism=parallelism,
    )


@_common
@argh.arg("--checkpoints", nargs="+", help="member checkpoints or prediction CSVs, in order")
@argh.arg("--split", help="split to predict")
def ensemble(
    config=None,
    manifest=None,
    out=None,
    seed=None,
    log_level=None,
    checkpoints=(),
    split=None,
):
    """Average the predictions of several models and report prefix ensembles."""
    _dispatch(
        "ensemble",
        config,
        manifest=manifest,
        out=out,
        seed=seed,
        log_level=log_level,
        checkpoints=list(checkpoints) if checkpoints else None,
        split=split,
    )


@_common
def labelcorr(config=None, manifest=None, out=None, seed=None, log_level=None):
    """Export the correlation matrix of the training labels."""
    _dispatch("labelcorr", config, manifest=manifest, out=out, seed=seed, log_level=log_level)


@_common
@_model
@argh.arg("--streams", nargs="+", help="visual streams to combine")
def combos(
    config=None,
    manifest=None,
    out=None,
    seed=None,
    log_level=None,
    loss=None,
    fusion=None,
    architecture=None,
    no_filter_faces=False,
    streams=(),
):
    """Train one model per combination of visual streams and compare them."""
    _dispatch(
        "combos",
        config,
        manifest=manifest,
        out=out,
        seed=seed,
        log_level=log_level,
        loss=loss,
        fusion=fusion,
        architecture=architecture,
        no_filter_faces=no_filter_faces,
        streams=list(streams) if streams else None,
    )


def build_parser() -> argh.ArghParser:
    parser = argh.ArghParser(prog="eri-toolkit", description=__doc__.strip().splitlines()[0])
    parser.add_commands(
        [
            synth,
            argh.named("train")(train_model),
            argh.named("eval")(evaluate_model),
            tune,
            ensemble,
            labelcorr,
            combos,
        ]
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        parser.dispatch(argv=argv)
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else ConfigError.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
