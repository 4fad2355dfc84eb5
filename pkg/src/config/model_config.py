"""
Configuration for the anomaly-detection model, its training and the analysis commands.
"""

# model_config.py
#
# This configuration file defines the defaults used across the pipeline:
# 1. Training hyperparameters (learning rate, widths, loss parameters)
# 2. Wavelet bank and numerical tolerances of the spectral routines
# 3. Dataset split, perturbation and synthetic-corpus settings
# 4. Functions to merge defaults with a config file, the environment and flags
#
# Precedence is defaults < config file < RQGNN_* environment < command line.

import logging
import os

from dotenv import dotenv_values

from src.errors import ConfigError

# Training hyperparameters
TRAIN_PARAMS = {
    "lr": 0.005,          # Adam step size
    "batch_size": 512,    # Graphs per optimisation step
    "epochs": 200,        # Best epoch is picked on validation Macro-F1
    "d": 64,              # Hidden dimension
    "q": 4,               # Number of wavelets (width)
    "K": 6,               # Base Chebyshev order (depth); wavelet i uses i*K
    "dropout": 0.4,       # Applied to the normalised embedding before the head
    "beta": 0.999,        # Class-balance factor
    "gamma": 1.5,         # Focal exponent
    "seed": 0,            # Root seed; every random stream is derived from it
    "variant": "full",    # full | mean-pool | no-rql | cross-entropy
}

VARIANTS = ("full", "mean-pool", "no-rql", "cross-entropy")

# Loss numerics
LOSS_PARAMS = {
    "log_floor": -50.0,   # log(p_y) is clamped from below at this value
}

# Wavelet bank
WAVELET_PARAMS = {
    "kernel_id": "band_pass",  # g(t) = t * exp(1 - t)
    "lambda_max": 2.0,         # Nominal bound of the normalised spectrum
    "quad_points": 512,        # Midpoint nodes for the coefficient integral
    "cache_decimals": 2,       # Per-graph lambda_max is rounded up to this many decimals
}

# Numerical tolerances of the linear-algebra routines
ORACLE_PARAMS = {
    "max_dim": 256,       # Dense Jacobi oracle refuses larger matrices
    "tol": 1e-12,         # Off-diagonal Frobenius norm relative to ||M||_F
    "max_sweeps": 100,
}

LAMBDA_MAX_PARAMS = {
    "tol": 1e-8,          # Relative change between power iterations
    "max_iters": 1000,
    "seed": 0,            # Start vector seed
}

RQ_EPS = 1e-12            # Added to x^T x in every Rayleigh Quotient

GRADCHECK_PARAMS = {
    "h": 1e-5,            # Central-difference step
    "max_entries": 64,    # Entries checked per tensor by the CLI
    "floor_scale": 1e-4,  # Error denominator floor, relative to the whole-gradient norm
    "tolerance": 1e-4,    # Largest accepted relative error
}

BATCH_NORM_PARAMS = {
    "eps": 1e-5,
    "momentum": 0.9,      # running = momentum * running + (1 - momentum) * batch
}

ADAM_PARAMS = {
    "beta1": 0.9,
    "beta2": 0.999,
    "eps": 1e-8,
}

# Dataset handling
SPLIT_PARAMS = {
    "train_ratio": 0.7,
    "val_ratio": 0.15,
    "test_ratio": 0.15,
}

PERTURB_PARAMS = {
    "fraction": 0.05,     # Share of normal graphs that get perturbed
    "prob": 0.15,         # Independent flip probability of every node pair
}

SYNTHETIC_PARAMS = {
    "num_graphs": 1000,
    "num_nodes": 26,
    "edge_prob": 28 / 325,     # Expected 28 edges on 26 nodes
    "num_node_labels": 8,
}

ANALYSIS_PARAMS = {
    "bins": 10,
    "subsamples": 5,
    "trials": 1000,
    "n_jobs": 1,          # joblib workers for per-graph Rayleigh Quotients
}

# Keys accepted from a config file, the environment or the command line
CONFIGURABLE = {
    **TRAIN_PARAMS,
    "kernel_id": WAVELET_PARAMS["kernel_id"],
    "quad_points": WAVELET_PARAMS["quad_points"],
    **SPLIT_PARAMS,
    **PERTURB_PARAMS,
    **SYNTHETIC_PARAMS,
    **ANALYSIS_PARAMS,
}

ENV_PREFIX = "RQGNN_"


def coerce_value(key, value):
    """
    Convert a raw string (or value) to the type of the default for `key`.

    Raises:
        ConfigError: If the key is unknown or the value does not parse
    """
    if key not in CONFIGURABLE:
        raise ConfigError(f"Unknown configuration key: {key}")
    default = CONFIGURABLE[key]
    if value is None:
        raise ConfigError(f"Configuration key {key} has no value")
    try:
        if isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, str):
                value = value.strip()
                as_float = float(value)
                if not as_float.is_integer():
                    raise ValueError(value)
                return int(as_float)
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"Invalid value for {key}: {value!r}")


def load_config_file(path):
    """
    Read a `key = value` config file.

    Args:
        path (str): Path to the config file

    Returns:
        dict: Coerced values keyed by configuration key

    Raises:
        ConfigError: If the file is missing or holds unknown keys
    """
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    raw = dotenv_values(path)
    return {key: coerce_value(key, value) for key, value in raw.items()}


def load_environment(environ=None):
    """Collect RQGNN_<KEY> overrides from the environment."""
    environ = os.environ if environ is None else environ
    values = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):]
        if key not in CONFIGURABLE:
            key = key.lower()
        values[key] = coerce_value(key, value)
    return values


def merge_config(config_path=None, overrides=None, environ=None):
    """
    Merge defaults, config file, environment and explicit overrides.

    Args:
        config_path (str, optional): `key = value` file
        overrides (dict, optional): Values given on the command line; None entries are ignored
        environ (dict, optional): Environment to read RQGNN_* keys from

    Returns:
        dict: Complete configuration

    Raises:
        ConfigError: For unknown keys or unparsable values
    """
    merged = dict(CONFIGURABLE)
    if config_path:
        from_file = load_config_file(config_path)
        logging.debug(f"Config file {config_path} sets {sorted(from_file)}")
        merged.update(from_file)
    merged.update(load_environment(environ))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        merged[key] = coerce_value(key, value)
    if merged["variant"] not in VARIANTS:
        raise ConfigError(f"Unknown variant {merged['variant']!r}; expected one of {VARIANTS}")
    return merged
