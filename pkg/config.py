"""Configuration settings for the latent channel tracker."""

import os

from dotenv import load_dotenv

load_dotenv()

# Output directory and log level can be overridden from .env
OUTPUT_DIR = os.getenv("CHANTRACK_OUT_DIR", "runs")
LOG_LEVEL = os.getenv("CHANTRACK_LOG_LEVEL", "INFO")

# Synthetic scene (single-bounce geometric model standing in for ray tracing)
SCENE_DEFAULTS = {
    "bs_rows": 10,
    "bs_cols": 10,
    "ue_rows": 2,
    "ue_cols": 2,
    "element_spacing": 0.5,
    "bs_position": [0.0, 0.0, 10.0],
    "num_paths": 3,
    "scatterer_positions": [
        [40.0, -35.0, 5.0],
        [70.0, 30.0, 8.0],
        [25.0, 20.0, 3.0],
    ],
    "carrier": 3.5e9,
    "reference_distance": 50.0,
    "scatter_coefficient": 0.5,
    "region_low": [30.0, -20.0, 1.5],
    "region_high": [60.0, 10.0, 1.5],
    "num_samples": 1111,
    "rng_seed": 7,
}

# Pilot/precoder/combiner dimensions; only the product M_B * M_U is reported
PILOT_DEFAULTS = {
    "m_bs": 24,
    "m_ue": 4,
    "amplitude": 1.0,
    "snr_db": 20.0,
    "rng_seed": 11,
}

AUTOENCODER_DEFAULTS = {
    "latent_dim": 64,
    "encoder_widths": [1280, 256],
    "decoder_widths": [256, 1280],
    "lambda_tc": 0.1,
    "perturb_std": 0.05,
    "batch_size": 64,
    "learning_rate": 1e-3,
    "epochs": 500,
    "patience": 50,
    "full_batch_tc": False,
    "seed": 0,
}

TRACKER_DEFAULTS = {
    "hidden_size": 64,
    "num_layers": 3,
    "head_width": 128,
    "lambda_alpha": 0.1,
    "lambda_beta": 0.1,
    "batch_size": 16,
    "learning_rate": 1e-3,
    "epochs": 200,
    "patience": 30,
    "direct_head_width": None,
    "seed": 0,
}

# Training and evaluation trajectories
TRAJECTORY_DEFAULTS = {
    "length": 100,
    "dt": 0.1,
    "num_training": 64,
    "eval_start": [35.0, -15.0, 1.5],
    "eval_velocity": [2.0, 2.0, 0.0],
}

EXPERIMENT_DEFAULTS = {
    "run_direct": True,
    "scaling_bs_rows": 20,
    "scaling_bs_cols": 20,
    "log_every": 25,
}

# Stable CSV schemas
CSV_COLUMNS = {
    "ablation": ["t", "dist_no_tc", "dist_tc"],
    "comparison": ["t", "nmse_ls", "nmse_tc", "nmse_notc", "nmse_direct"],
    "ls": ["t", "nmse_ls"],
    "parameter_counts": ["n_bs", "method", "parameters"],
}

# Readable method names for report tables
METHOD_LABELS = {
    "nmse_ls": "Independent LS Estimation",
    "nmse_tc": "Latent Tracking with Temporal Correlation",
    "nmse_notc": "Latent Tracking without Temporal Correlation",
    "nmse_direct": "Direct Channel Tracking Benchmark",
}

# CLI exit codes
EXIT_CODES = {
    "ok": 0,
    "usage": 1,
    "data": 2,
    "numerical": 3,
}

# Guard threshold for vanishing standard deviations
STD_GUARD = 1e-12

# NMSE floor in dB
NMSE_FLOOR_DB = -300.0
