"""Stochastic sub-grid parametrizations for the two-scale Lorenz '96 system,
trained on ensemble trajectories with the CRPS."""
from .crps import batch_loss, scaled_crps
from .dataset import TruthDataset, generate_truth, load_dataset, measure_subgrid_tendency, save_dataset
from .dynamics import L96Params, preset
from .evaluation import (ClimateHistogram, ForecastConfig, MetricSeries, climate_run, ensemble_forecast,
                         forecast_experiment, hellinger, ks_distance)
from .kernels import BACKEND
from .models import (CoupledOuModel, GlobalModel, PolyModel, fit_derivative_models, load_model,
                     save_model)
from .pod import PodBasis, compute_pod
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ClimateHistogram", "CoupledOuModel", "ForecastConfig", "GlobalModel", "L96Params",
    "MetricSeries", "PodBasis", "PolyModel", "TrainConfig", "TruthDataset", "batch_loss", "climate_run",
    "compute_pod", "ensemble_forecast", "fit_derivative_models", "forecast_experiment", "generate_truth",
    "hellinger", "ks_distance", "load_dataset", "load_model", "measure_subgrid_tendency", "preset",
    "save_dataset", "save_model", "scaled_crps", "train",
]
