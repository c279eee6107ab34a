# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.

from typing import List, Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TREND = 3


class GlyphsegError(Exception):
    exit_code = EXIT_USAGE


class ConfigurationError(GlyphsegError):
    exit_code = EXIT_USAGE


class ShapeError(GlyphsegError, ValueError):
    exit_code = EXIT_DATA


class BoundsError(GlyphsegError, IndexError):
    exit_code = EXIT_DATA


class EmptyInputError(GlyphsegError, ValueError):
    exit_code = EXIT_DATA


class BlankReferenceError(GlyphsegError, ZeroDivisionError):
    exit_code = EXIT_DATA


class FormatError(GlyphsegError):
    """Malformed image or model file. The message names the file and, for
    binary formats, the byte offset where parsing gave up."""

    exit_code = EXIT_DATA

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None):
        self.path = path
        self.offset = offset
        location = path or "<bytes>"
        if offset is not None:
            location = f"{location} @ byte {offset}"
        super().__init__(f"{location}: {message}")


class DivergenceError(GlyphsegError):
    exit_code = EXIT_DATA

    def __init__(self, epoch: int, value: float):
        self.epoch = epoch
        self.value = value
        super().__init__(f"Training diverged at epoch {epoch} (MSE={value})")


class TrendAssertionError(GlyphsegError):
    exit_code = EXIT_TREND

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("Trend assertions failed:\n" + "\n".join(f"  * {v}" for v in self.violations))
