"""Non-stationary domain generalization toolkit.

Synthetic evolving-domain generators, an adaptive invariant
representation learner with ERM/LD/FT baselines, the static and
sliding-window evaluation protocols, and exact finite-distribution
verification of the divergence identities the method rests on.
"""

__version__ = "0.1.0"

from .datagen import (DomainSequence, GroundTruthMap, LabeledDataset, SplitSpec,
                      apply_ground_truth_map, gen_circle, gen_circle_hard,
                      gen_rotating_gaussian, read_domain_sequence, split,
                      write_domain_sequence)
from .evaluation import (EvalReport, EvalSummary, eval_d, eval_s, export_boundary,
                         predict_target, run_protocol, summarize)
from .gradcheck import grad_check
from .model import AirlConfig, AirlState
from .objectives import (coral_inv_loss, estimate_class_priors, importance_weights,
                         weighted_cls_loss)
from .tensor import Tensor, backward, no_grad
from .theory import (FiniteDist, FiniteJoint, check_error_transfer, check_pinsker,
                     check_reweighting_identity, js, kl, tv)
from .training import TrainConfig, TrainedModel, TrainSpec, ablate, train, train_airl, train_baseline
