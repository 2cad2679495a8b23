"""Score-level fusion rules."""

from ..types import ValidationError

from .fixed import FIXED_KINDS, FixedRule, fuse_fixed
from .lda import LdaModel, train_lda
from .llr import (FakeDensity, GammaFit, LlrModel, SecureLlrModel, extended_llr_prior,
                  fit_gamma, fuse_llr, fuse_secure_llr, train_llr, train_secure_llr)
from .svm import KernelModel, rbf_kernel, train_svm_rbf
from .tuning import C_GRID, GAMMA_GRID, select_hyperparams

RULES = ("sum", "product", "minimum", "lda", "llr", "svm_rbf",
         "extended_llr", "uniform_llr", "alpha_llr", "alpha_svm_rbf")


def model_from_json(obj):
    """Rebuild any serialized fusion model."""
    rule = obj["rule"]
    if rule in FIXED_KINDS:
        return FixedRule(rule)
    if rule == "lda":
        return LdaModel.from_json(obj)
    if rule == "llr":
        return LlrModel.from_json(obj)
    if rule in ("extended_llr", "uniform_llr", "alpha_llr"):
        return SecureLlrModel.from_json(obj)
    if rule in ("svm_rbf", "alpha_svm_rbf"):
        return KernelModel.from_json(obj)
    raise ValidationError(f"unknown rule {rule!r}; supported rules: {list(RULES)}")


__all__ = [
    "C_GRID", "FIXED_KINDS", "FakeDensity", "FixedRule", "GAMMA_GRID", "GammaFit",
    "KernelModel", "LdaModel", "LlrModel", "RULES", "SecureLlrModel", "extended_llr_prior",
    "fit_gamma", "fuse_fixed", "fuse_llr", "fuse_secure_llr", "model_from_json", "rbf_kernel",
    "select_hyperparams", "train_lda", "train_llr", "train_secure_llr", "train_svm_rbf",
]
