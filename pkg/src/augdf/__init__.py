"""Deep Forest cascades regularized by cut-mix augmentation with learned per-layer schedules."""

from .augment import MixRecord, Policy, apply_policy, mix_pair, mix_rows, sample_mask
from .cascade import (CascadeModel, CascadeParams, Layer, accuracy, forward_features, load_model, new_model,
                      predict_at_layer,
                      predict_checkpoint_ensemble, predict_layers, save_model, select_output_layer_cv,
                      train_layer)
from .data import (Column, Dataset, Schema, from_arrays, kfold_indices, load_csv, load_schema, save_csv,
                   save_schema, stratified_split)
from .forest import (Forest, ForestParams, Tree, TreeParams, feature_importance, fit_forest, fit_tree,
                     oof_predict, predict_forest, predict_tree)
from .search import (PolicyGrid, PolicySchedule, apply_schedule, default_grid, eval_individual, explore,
                     exploit, grid_search_first_layer, neighbour_search, neighbour_weights,
                     run_schedule_search, vanilla_cascade)

__version__ = "0.1.0"
