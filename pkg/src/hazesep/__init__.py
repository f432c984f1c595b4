"""Tissue / haze separation of RF frames by joint posterior diffusion sampling."""

from .compand import MuLawCompander, decode, encode
from .config import RunConfig
from .dehaze import DehazeConfig, DehazeResult, JointDehazer, dehaze
from .errors import ConfigError, DataFileError, NumericalError
from .imaging import BModeImage, BModeTransformer, bmode
from .metrics import fwhm_lateral, gcnr, ks_statistic, psnr, roi_interpolate
from .patchwork import PatchLayout
from .phantom import HazeSpec, PhantomSpec
from .score import AnalyticGaussianScore, AnalyticGmmScore, ScoreNet, load_checkpoint, save_checkpoint
from .sde import VESchedule
from .tensor import RFGrid, SeededRng, read_urf, write_urf

__version__ = "0.1.0"

__all__ = [
    "AnalyticGaussianScore", "AnalyticGmmScore", "BModeImage", "BModeTransformer", "ConfigError",
    "DataFileError", "DehazeConfig", "DehazeResult", "HazeSpec", "JointDehazer", "MuLawCompander",
    "NumericalError", "PatchLayout", "PhantomSpec", "RFGrid", "RunConfig", "ScoreNet", "SeededRng",
    "VESchedule", "bmode", "decode", "dehaze", "encode", "fwhm_lateral", "gcnr", "ks_statistic",
    "load_checkpoint", "psnr", "read_urf", "roi_interpolate", "save_checkpoint", "write_urf",
]
