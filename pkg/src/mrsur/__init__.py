"""Multi-fidelity sequential design for excursion-probability estimation.

Maximum-rate stepwise uncertainty reduction (MR-SUR) on multi-fidelity
Gaussian-process models, with the supporting special functions, designs,
hyperparameter inference, test problems and experiment harness.
"""
from ._accel import backend
from .criteria import (CriterionField, IntegrationNodes, SurContext, gain_G,
                       mrsur_select, pareto_front, sur_J, uncertainty_H)
from .design import NestedDesign, maximin_improve, nlhs, optimize_criterion
from .gp import CholeskyFailure, MaternKernel, StationaryModel, fit
from .models import AdditiveModel, ARModel, NoiseModel
from .special import bvn_cdf, normal_cdf

__version__ = "0.1.0"
