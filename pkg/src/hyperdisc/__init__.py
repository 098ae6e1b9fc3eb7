"""Hyper-parameter discipline toolkit: schedules, SGD, range tests, searches."""
from .budget import BudgetModel, fit_budget
from .data import Dataset, bundled_task, gen_synthetic, load_csv, load_idx, load_mnist, split
from .diagnostics import classify_curve, find_overfit_region
from .harness import RunConfig, RunLog, load_snapshot, save_snapshot, train
from .netcore import ArchSpec, init_network
from .optimizer import HyperParams, sgd_step
from .rangetest import run_range_test, suggest_bounds
from .schedules import LrPolicy, MomentumPolicy, lr_at, momentum_at
from .search import momentum_sweep, run_recipe, tbs_compare, wd_search

__version__ = "0.1.0"
