from .benchmark import benchmark_train_config, run_benchmark, write_benchmark_table
from .common import ExperimentResult, parallel_map, trial_seed
from .double_descent import detect_peak, run_double_descent
from .lottery import (
    LotteryReport,
    LotteryTicket,
    find_lottery_ticket,
    lottery_ablations,
    mask_adjacency,
    run_lottery,
    sort_mask_for_display,
    write_mask_grids,
)
from .metalearn import (
    metalearn_activation,
    metalearn_lr,
    pretrain_activation,
    quadratic_meta_gradient,
    quadratic_meta_gradient_closed_form,
    unrolled_inner_run,
)
from .pooling import run_pooling_grid, subset_dataset

__all__ = [
    "ExperimentResult",
    "LotteryReport",
    "LotteryTicket",
    "benchmark_train_config",
    "detect_peak",
    "find_lottery_ticket",
    "lottery_ablations",
    "mask_adjacency",
    "metalearn_activation",
    "metalearn_lr",
    "parallel_map",
    "pretrain_activation",
    "quadratic_meta_gradient",
    "quadratic_meta_gradient_closed_form",
    "run_benchmark",
    "run_double_descent",
    "run_lottery",
    "run_pooling_grid",
    "sort_mask_for_display",
    "subset_dataset",
    "trial_seed",
    "unrolled_inner_run",
    "write_benchmark_table",
    "write_mask_grids",
]
