"""Cost-volume uncertainty, uncertainty-guided disparity rectification, and the DR loss for iterative stereo."""

from .costvol import (CostVolume, FeatureMaps, LookupConfig, build_volume, encode, init_disparity,
                      lookup)
from .gridcore import Node, ParamStore, backward, grad_check
from .loss import DrLossConfig, LossReport, dr_weight, smooth_l1, total_loss
from .rectifier import (IterationTrace, ModelConfig, UdcConfig, UdrConfig, init_params,
                        run_iterations, udc_step, udr_step, update_unit)
from .stereoio import DisparityMap, ImagePair
from .synthtrain import SceneSpec, TrainConfig, gen_scene, one_cycle_lr, train
from .uec import UecGtConfig, estimate_uncertainty, metric_auc, metric_pue, uncertainty_gt

__version__ = "0.1.0"
