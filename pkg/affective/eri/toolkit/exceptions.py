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

from pathlib import Path
from typing import Union


class EriToolkitError(Exception):
    exit_code = 1

    def __init__(
        self,
        msg: str = None,
        reason: str = None,
        path: Union[str, Path] = None,
        field: str = None,
    ):
        self.reason = reason
        self.path = str(path) if path is not None else None
        self.field = field
        msg = msg or reason
        super().__init__(msg)


class ConfigError(EriToolkitError):
    exit_code = 2


class InvalidHyperparams(ConfigError): ...


class DataError(EriToolkitError):
    exit_code = 3


class FeatureFormatError(DataError): ...


class FeatureCorruptionError(DataError): ...


class FeatureValidationError(DataError): ...


class ManifestError(DataError): ...


class IncompatibleCheckpoint(DataError): ...


class InsufficientSamples(DataError): ...


class ComputeError(EriToolkitError):
    exit_code = 4


class ShapeError(ComputeError): ...


class NumericalError(ComputeError): ...


class MaskError(ComputeError): ...


class NoCompletedTrials(ComputeError): ...


class ToolkitWarning(Warning): ...


class BadSettingsWarning(ToolkitWarning): ...
