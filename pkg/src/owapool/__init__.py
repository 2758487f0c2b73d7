"""Ordered weighted average pooling with learnable weights."""
from owapool.owa import (Mode, OwaWeights, PoolPlan, PoolTrace, Regime, RegularizationConfig, Scope,
                         global_plan, init_weights, owa_aggregate, owa_pool_backward,
                         owa_pool_forward, penalty_cost, penalty_grad, project_weights, sort_desc)
from owapool.tensor import Matrix, ShapeError, Tensor4

__version__ = "0.1.0"
