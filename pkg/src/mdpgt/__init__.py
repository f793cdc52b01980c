"""Decentralized policy-gradient training with momentum and gradient tracking.

Modules:

* :mod:`mdpgt.topology`  -- communication graphs and gossip mixing matrices.
* :mod:`mdpgt.policy`    -- linear-Gaussian and categorical MLP policies.
* :mod:`mdpgt.envsim`    -- lineworld/gridworld cooperative navigation.
* :mod:`mdpgt.gradient`  -- gradient estimators and the momentum surrogate.
* :mod:`mdpgt.decentral` -- the DPG, MDPG and MDPGT training loops.
* :mod:`mdpgt.theory`    -- closed-form constants, step-size conditions and schedules.
* :mod:`mdpgt.harness`   -- config, CLI, metrics output and sweeps.
"""

from . import decentral, envsim, gradient, harness, policy, theory, topology

__all__ = ["topology", "policy", "envsim", "gradient", "decentral", "theory", "harness"]
__version__ = "0.1.0"
