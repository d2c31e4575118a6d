"""Beta-band C-Morlet spectrogram features and l_p-norm multiple kernel
learning for decoding tasks from subthalamic local field potentials."""
from .errors import ConfigError, DataError, StnMklError
from .experiment import ExperimentConfig, evaluate, extract_features, run_experiment
from .kernel_svm import KernelSpec, solve_svm_dual, train_multiclass
from .lfp_data import LfpRecording, SyntheticSpec, generate_synthetic_recording, load_recording, save_recording
from .mkl import MklConfig, train_mkl, train_mkl_multiclass
from .spectrogram import MorletParams, cwt_cmorlet, hemisphere_spectrogram

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "KernelSpec",
    "LfpRecording",
    "MklConfig",
    "MorletParams",
    "StnMklError",
    "SyntheticSpec",
    "cwt_cmorlet",
    "evaluate",
    "extract_features",
    "generate_synthetic_recording",
    "hemisphere_spectrogram",
    "load_recording",
    "run_experiment",
    "save_recording",
    "solve_svm_dual",
    "train_mkl",
    "train_mkl_multiclass",
    "train_multiclass",
]
