#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import inspect
import logger
from enum import Enum
from typing import Optional, Dict, Literal

from pydantic import RootModel, BaseModel

log = logger.get_logger(__name__)


class PgmError(Exception):
    pass


class InvalidInputError(PgmError, ValueError):
    pass


class InvalidParameterError(PgmError, ValueError):
    pass


class FlowFormatError(PgmError):
    pass


class MatchFormatError(PgmError):
    def __init__(self, *args, line: int) -> None:
        super().__init__(*args)
        self.line = line


class ImageIOError(PgmError, OSError):
    pass


class SerializableBaseModel(BaseModel):
    @classmethod
    def from_dict(cls, d: Dict) -> 'SerializableBaseModel':
        return cls.model_validate(d)

    def to_dict(self, mode: Literal['json', 'python'] = 'python') -> Dict:
        return self.model_dump(mode=mode)

    @classmethod
    def from_json(cls, json_str: str) -> 'SerializableBaseModel':
        return cls.model_validate_json(json_str)

    def to_json(self, indent: Optional[int] = None) -> str:
        return self.model_dump_json(indent=indent)


class SerializableDataClass:
    @classmethod
    def from_dict(cls, d: Dict) -> 'SerializableDataClass':
        return RootModel[cls].model_validate(d).root

    def to_dict(self, mode: Literal['json', 'python'] = 'python') -> Dict:
        return RootModel[self.__class__](self).model_dump(mode=mode)

    @classmethod
    def from_json(cls, json_str: str) -> 'SerializableDataClass':
        return RootModel[cls].model_validate_json(json_str).root

    def to_json(self, indent: Optional[int] = None) -> str:
        return RootModel[self.__class__](self).model_dump_json(indent=indent)


class ColorSpace(str, Enum):
    RGB = 'RGB'
    GRAY = 'GRAY'
    CIELAB = 'CIELAB'
    YCRCB = 'YCRCB'

    @property
    def channels(self) -> int:
        return 1 if self is ColorSpace.GRAY else 3


class GradientVariant(str, Enum):
    """C and G keep full gradients, CD and GD keep only their signs."""

    C = 'C'
    G = 'G'
    CD = 'CD'
    GD = 'GD'

    @property
    def is_gray(self) -> bool:
        return self in (GradientVariant.G, GradientVariant.GD)

    @property
    def is_direction_only(self) -> bool:
        return self in (GradientVariant.CD, GradientVariant.GD)

    @property
    def full(self) -> 'GradientVariant':
        """The variant with the same color channels that keeps gradient magnitudes."""
        return GradientVariant.G if self.is_gray else GradientVariant.C


class Direction(str, Enum):
    TO_COARSER = 'to_coarser'
    TO_FINER = 'to_finer'


class Ablation(str, Enum):
    FULL = 'full'
    NO_REFINEMENT = 'no_refinement'
    PROPAGATE_ALL = 'propagate_all'
    NO_RECORD = 'no_record'
    UNLIMITED_SEARCH = 'unlimited_search'


class PropagationOrder(str, Enum):
    FLOWFIELDS = 'flowfields'
    PATCHMATCH = 'patchmatch'


class InterpMode(str, Enum):
    NW = 'nw'
    LA = 'la'


def build_exception_map(module) -> Dict:
    return {
        name: obj
        for name, obj in inspect.getmembers(module)
        if inspect.isclass(obj) and issubclass(obj, BaseException)
    }
