"""Learning-rate scaling laboratory for LoRA adapters under SignSGD.

The package measures how adapter feature updates scale with layer width
n and adapter rank r, checks the closed-form moments behind those
scalings by Monte Carlo, sweeps learning rates on a synthetic
teacher-student task, and turns tuned learning rates into prescriptions
for other widths, ranks, or full finetuning.

Reporting (CSV/SVG emission) lives in lorascale.reporting and the
command line in lorascale.cli; both are imported on demand so that the
core stays free of plotting dependencies at import time.
"""

__version__ = "0.1.0"

from .errors import (
    DimensionError,
    DomainError,
    InsufficientDataError,
    IoError,
    LorascaleError,
    NoOptimumError,
    NumericError,
    RankError,
    UsageError,
)
from .lora import (
    INIT_A,
    INIT_B,
    ForwardTrace,
    LoraLayer,
    Multiplier,
    effective_alpha,
    forward,
    grad_a,
    grad_b,
    make_layer,
)
from .lr_sweep import (
    LoraAdapter,
    RunResult,
    SweepTable,
    TeacherTask,
    make_task,
    select_best_lr,
    sweep,
    train_run,
)
from .mc_lemmas import (
    McEstimate,
    delta1_second_moment,
    general_sign_product,
    rho_sq_expectation,
    rho_sq_symmetry_gap,
    stein_sign_product,
)
from .prescribe import Prescription, exponents_for, transfer_lr, transfer_to_fft
from .randkit import (
    Seed,
    derive,
    gaussian_matrix,
    gaussian_vector,
    generator,
    parse_seed,
    standard_normal,
)
from .scaling import (
    AxisExponents,
    CellResult,
    Efficiency,
    EtaRule,
    ExponentFit,
    ScalingConfig,
    TheoryExponents,
    classify_efficiency,
    fit_exponent,
    run_cell,
    run_grid,
    theory_exponents,
)
from .signsgd import FFT, FftLayer, StepRecord, sign_of, step_fft, step_lora, telescope_check

__all__ = [
    "DimensionError",
    "DomainError",
    "InsufficientDataError",
    "IoError",
    "LorascaleError",
    "NoOptimumError",
    "NumericError",
    "RankError",
    "UsageError",
    "INIT_A",
    "INIT_B",
    "FFT",
    "AxisExponents",
    "CellResult",
    "Efficiency",
    "EtaRule",
    "ExponentFit",
    "ForwardTrace",
    "FftLayer",
    "LoraAdapter",
    "LoraLayer",
    "McEstimate",
    "Multiplier",
    "Prescription",
    "RunResult",
    "ScalingConfig",
    "Seed",
    "StepRecord",
    "SweepTable",
    "TeacherTask",
    "TheoryExponents",
    "classify_efficiency",
    "delta1_second_moment",
    "derive",
    "effective_alpha",
    "exponents_for",
    "fit_exponent",
    "forward",
    "gaussian_matrix",
    "gaussian_vector",
    "general_sign_product",
    "generator",
    "grad_a",
    "grad_b",
    "make_layer",
    "make_task",
    "parse_seed",
    "rho_sq_expectation",
    "rho_sq_symmetry_gap",
    "run_cell",
    "run_grid",
    "select_best_lr",
    "sign_of",
    "standard_normal",
    "step_fft",
    "step_lora",
    "stein_sign_product",
    "sweep",
    "telescope_check",
    "theory_exponents",
    "train_run",
    "transfer_lr",
    "transfer_to_fft",
    "__version__",
]
