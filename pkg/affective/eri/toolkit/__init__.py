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

from importlib import metadata
from pathlib import Path

import lazy_object_proxy

from .config import RunConfig
from .diffcore import Tensor, grad_check
from .encoders import (
    Architecture,
    Checkpoint,
    FusionMode,
    Hyperparams,
    ModelParams,
    fuse_forward,
    init_params,
    load_checkpoint,
    resnet1d_forward,
    save_checkpoint,
    te_forward,
)
from .ensembler import EnsembleSpec, ensemble_predict, incremental_report
from .exceptions import (
    BadSettingsWarning,
    ComputeError,
    ConfigError,
    DataError,
    EriToolkitError,
    IncompatibleCheckpoint,
    InsufficientSamples,
    InvalidHyperparams,
    ManifestError,
    NoCompletedTrials,
)
from .featstore import (
    AlignPolicy,
    DatasetManifest,
    EmotionVector,
    FeatureSequence,
    MultimodalSample,
    SynthSpec,
    concat_streams,
    filter_trainable,
    gen_synthetic,
    read_feature_file,
    read_manifest,
    write_feature_file,
)
from .objectives import LossKind, MetricReport, label_corr_matrix, mean_pcc, mse, pcc, pcc_loss
from .trainer import PredictionTable, TrainHistory, TrainingRun, evaluate, predict, train
from .tuner import SearchSpace, TrialRecord, best_trial, run_search, sample_config

__all__ = [
    "AlignPolicy",
    "Architecture",
    "BadSettingsWarning",
    "Checkpoint",
    "ComputeError",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "EmotionVector",
    "EnsembleSpec",
    "EriToolkitError",
    "FeatureSequence",
    "FusionMode",
    "Hyperparams",
    "IncompatibleCheckpoint",
    "InsufficientSamples",
    "InvalidHyperparams",
    "LossKind",
    "ManifestError",
    "MetricReport",
    "ModelParams",
    "MultimodalSample",
    "NoCompletedTrials",
    "PredictionTable",
    "RunConfig",
    "SearchSpace",
    "SynthSpec",
    "Tensor",
    "TrainHistory",
    "TrainingRun",
    "TrialRecord",
    "best_trial",
    "concat_streams",
    "ensemble_predict",
    "evaluate",
    "filter_trainable",
    "fuse_forward",
    "gen_synthetic",
    "grad_check",
    "incremental_report",
    "init_params",
    "label_corr_matrix",
    "load_checkpoint",
    "mean_pcc",
    "mse",
    "pcc",
    "pcc_loss",
    "predict",
    "read_feature_file",
    "read_manifest",
    "resnet1d_forward",
    "run_search",
    "sample_config",
    "save_checkpoint",
    "te_forward",
    "train",
    "write_feature_file",
]


def _app_version() -> str:
    try:
        return metadata.version("eri-toolkit")
    except (metadata.PackageNotFoundError, AttributeError):  # pragma: no cover
        # not yet installed (running tests prior to installation)
        with (Path(__file__).parent.parent.parent.parent / "VERSION.txt").open("r") as fp:
            return fp.read().strip()


__version__: str = lazy_object_proxy.Proxy(_app_version)
