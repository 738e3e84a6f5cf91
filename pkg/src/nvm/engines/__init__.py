from .base import GLOBAL, Engine, ProgramFailed, UnknownContract, UnresolvableAddress, WriteSet
from .bvm import BvmEngine
from .evm import EvmEngine, PrecompileUnimplemented
from .native import NativeEngine
from .svm import SvmEngine
from .tvm import TvmEngine, UnmappedOpcode

__all__ = [
    "GLOBAL",
    "BvmEngine",
    "Engine",
    "EvmEngine",
    "NativeEngine",
    "PrecompileUnimplemented",
    "ProgramFailed",
    "SvmEngine",
    "TvmEngine",
    "UnknownContract",
    "UnmappedOpcode",
    "UnresolvableAddress",
    "WriteSet",
]
