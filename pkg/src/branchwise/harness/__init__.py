from .config import (BranchConfig, DatasetConfig, ExperimentConfig, GridConfig,
                     NetworkConfig, TeacherConfig, TrainingConfig, config_from_dict,
                     load_config)
from .protocol import (CellResult, ExperimentResult, OptimizerSelection, StrategySelection,
                       grid_search_pacing, load_dataset, pick_optimizer, prepare_backbone,
                       prepare_teachers, run_cell, run_experiment, select_vanilla_optimizer,
                       train_network, emit_results, format_table)
from .seeding import derive_seed

__all__ = [
    "BranchConfig", "DatasetConfig", "ExperimentConfig", "GridConfig", "NetworkConfig",
    "TeacherConfig", "TrainingConfig", "config_from_dict", "load_config",
    "CellResult", "ExperimentResult", "OptimizerSelection", "StrategySelection",
    "grid_search_pacing", "load_dataset", "pick_optimizer", "prepare_backbone",
    "prepare_teachers", "run_cell", "run_experiment", "select_vanilla_optimizer",
    "train_network",
    "emit_results", "format_table", "derive_seed",
]
