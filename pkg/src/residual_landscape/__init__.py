"""Landscape of residual units x -> w^T (x + V f(x)) relative to linear predictors."""
from .calculus import (fd_grad, fd_hessian, grad_Flin, grad_wv, hess_wv, min_eig_sym,
                       minimize_ball, minimize_flin, objective_F, objective_Flin, rel_error,
                       spectral_norm)
from .counterexamples import (Example1Instance, RegularizedObjective, contour_grid,
                              example1_eval, example1_verify, figure1_artifacts, find_local_min,
                              regularized_eval)
from .errors import ContractError, DomainError, PreconditionError, ShapeError
from .landscape import (bordered_matrix, certificate_direction, classify_sopsp,
                        estimate_lipschitz, find_sopsp, hessian_zero_structure_check,
                        lemma1_certificate, lemma2_bordered_min_eig, thm1_lower_bound,
                        thm2_check, thm3_bound, thm3_excess, zero_slope_feature_mean)
from .model import (Dataset, FeatureMap, LabeledSample, Loss, ResidualParams, feature_eval,
                    loss_eval, tree_mean, tree_sum)
from .reporting import BoundCheck, summarize
from .sgd import (ProductDomain, SgdTrace, SkipParams, domain_constants, ogd_regret_check,
                  project_product, sgd_run, skip_predict, thm5_check)
from .vector import (VectorDataset, VectorLoss, VectorParams, grad_WV_vec, lemma4_certificate,
                     objective_F_vec, s_min, thm_vec_bound)

__version__ = "0.1.0"
