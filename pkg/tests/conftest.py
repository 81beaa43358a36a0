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

import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict

import factory
import faker
import numpy as np
import pytest

from affective.eri.toolkit.encoders import Hyperparams
from affective.eri.toolkit.featstore import (
    DatasetManifest,
    FeatureSequence,
    SynthSpec,
    gen_synthetic,
    read_manifest,
)

MICRO_SEED = 7

fake = faker.Faker()
logger = logging.getLogger(__name__)


class FeatureSequenceFactory(factory.Factory):
    class Meta:
        model = FeatureSequence

    class Params:
        frames = 5
        dim = 3
        step = 0.2

    modality_id = "visual"
    timestamps = factory.LazyAttribute(lambda o: np.arange(o.frames) * o.step)
    data = factory.LazyAttribute(
        lambda o: np.random.default_rng(fake.pyint()).standard_normal((o.frames, o.dim))
    )


class HyperparamsFactory(factory.Factory):
    """Small enough to train in well under a second per epoch."""

    class Meta:
        model = Hyperparams

    learning_rate = 3e-3
    batch_size = 4
    hidden_dim = 8
    num_heads = 2
    num_layers = 1
    conv_kernel = 3
    dropout = 0.0
    max_epochs = 2
    seed = 0


class SynthSpecFactory(factory.Factory):
    class Meta:
        model = SynthSpec

    n_train = 12
    n_val = 6
    n_test = 3
    dims = factory.LazyFunction(lambda: {"visual": 4, "audio": 3})
    frames_min = 4
    frames_max = 8
    no_face_fraction = 0.25


@pytest.fixture
def random_sequence() -> Callable[..., FeatureSequence]:
    return FeatureSequenceFactory


@pytest.fixture
def tiny_hp() -> Callable[..., Hyperparams]:
    return HyperparamsFactory


@pytest.fixture(scope="session")
def micro_dataset_dir(tmp_path_factory) -> Path:
    out_dir = tmp_path_factory.mktemp("micro")
    gen_synthetic(SynthSpecFactory(), MICRO_SEED, out_dir)
    return out_dir


@pytest.fixture(scope="session")
def micro_manifest(micro_dataset_dir) -> DatasetManifest:
    return read_manifest(micro_dataset_dir / "manifest.jsonl")


@pytest.fixture(scope="session")
def multi_visual_manifest(tmp_path_factory) -> DatasetManifest:
    out_dir = tmp_path_factory.mktemp("multi_visual")
    spec = SynthSpecFactory(
        dims={"face": 3, "pose": 2, "audio": 3},
        visual_modalities=("face", "pose"),
        no_face_fraction=0.0,
    )
    return gen_synthetic(spec, MICRO_SEED, out_dir)


@pytest.fixture
def write_config(tmp_path) -> Callable[[Dict[str, Any]], Path]:
    def _func(values: Dict[str, Any]) -> Path:
        path = tmp_path / f"config_{fake.pyint(1000, 9999)}.json"
        path.write_text(json.dumps(values))
        return path

    return _func


@pytest.fixture
def micro_spec() -> Callable[..., SynthSpec]:
    return SynthSpecFactory
