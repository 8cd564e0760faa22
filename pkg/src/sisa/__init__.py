"""Sharded, isolated, sliced, aggregated training with exact unlearning.

Submodules
----------
dataset       records, synthetic blobs, CSV ingest, erasure probabilities
partition     shard/slice layouts (uniform and distribution-aware)
learner       deterministic SGD for logistic regression and a small MLP
checkpoint    binary checkpoint format
orchestrator  training, aggregation and unlearning
analytics     closed-form expected retraining costs
montecarlo    simulation of the same costs
cli           the ``sisa`` command
"""
from .errors import (DataFormatError, IntegrityError, NotFoundError, NumericalError, SisaError,
                     VersionError)
from .dataset import (DataPoint, Dataset, ScenarioConfig, assign_probs, gen_synthetic, load_csv,
                      split_train_test, three_group_scenario, write_csv)
from .partition import (PartitionPlan, ShardBudget, distribution_aware_shard, load_plan, locate,
                        remove_point, save_plan, uniform_partition)
from .learner import (Arch, ModelParams, SliceSchedule, TrainConfig, epoch_calibration,
                      gradient_check, init_params, predict, train)
from .checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .orchestrator import (MAJORITY, MEAN, CostLedger, RequestStream, SisaModel, aggregate_predict,
                           evaluate, evaluate_report, load_model, save_model, sisa_train, unlearn)
from .analytics import ExperimentParams, CostReport, combined_report
from .montecarlo import simulate, simulate_curve, simulate_scenario, validate_formulas

__version__ = "0.1.0"
