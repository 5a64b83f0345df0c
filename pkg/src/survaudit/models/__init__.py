from .cox import (BreslowTable, CoxLossState, breslow_cumhaz, cox_derivatives, cox_gradient,
                  cox_hessian_diag, cox_neg_log_pl, fixed_horizon_risk)
from .coxnet import CoxNetModel, fit_coxnet, kkt_residual, lambda_max, soft_threshold
from .gbcox import GbcoxModel, Tree, TreeParams, fit_gbcox, predict_gbcox, tree_split_gain

__all__ = [
    "BreslowTable", "CoxLossState", "CoxNetModel", "GbcoxModel", "Tree", "TreeParams",
    "breslow_cumhaz", "cox_derivatives", "cox_gradient", "cox_hessian_diag", "cox_neg_log_pl",
    "fit_coxnet", "fit_gbcox", "fixed_horizon_risk", "kkt_residual", "lambda_max",
    "predict_gbcox", "soft_threshold", "tree_split_gain",
]
