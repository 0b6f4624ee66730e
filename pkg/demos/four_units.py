"""Every randomization quantity for a four-unit experiment, small enough to
check by hand.

    python3 demos/four_units.py
"""

import numpy as np

from bri import (ConstantEffect, CoarsenedMC, ExactEnum, Normal, Prior, RoundedPMF, grid_posterior,
                 validate_study)
from bri.likelihood import randomization_moments
from bri.posterior import hodges_lehmann
from bri.randomization import CompleteRandomization, enumerate_statistic, frt_p_value
from bri.statistics import DIM, RankSum, dim

study = validate_study([0, 1, 1, 0], [1.2, 4.9, 3.4, 3.6])
mech = CompleteRandomization(study.n, study.n1)
model = ConstantEffect()
print(f"observed difference in means: {dim(study):.3f}")

# randomization distribution of the difference in means under no effect
values, probs = enumerate_statistic(model, np.array([0.0]), study, DIM(), mech)
for v, p in sorted(zip(values[:, 0], probs)):
    print(f"  s = {v:6.3f}  with probability {p:.4f}")
test = frt_p_value(study, model, [0.0], DIM(), mech, n_draws=0, rng=None)
print(f"exact two-sided randomization p-value: {test.value:.4f}")

# the randomization mean equals theta, so the Hodges-Lehmann estimate is the observed statistic
mom = randomization_moments(model, [1.0], study, DIM(), mech)
print(f"r_n(1.0) = {mom.r_n[0]:.6f}, Var = {mom.V_n[0, 0] / study.n:.6f}")
print(f"Hodges-Lehmann estimate: {hodges_lehmann(model, DIM(), study, mech):.6f}")

# posteriors from three ways of handling a discrete statistic
prior = Prior((Normal(0.0, 10.0),))
engines = {
    "exact rank sum": ExactEnum(RankSum(), mech),
    "coarsened DIM": CoarsenedMC(DIM(), mech, eps=0.5),
    "rounded DIM": RoundedPMF(DIM(), mech, step=1.0),
}
for name, engine in engines.items():
    post = grid_posterior(prior, engine, study, model, grid=(-30.0, 30.0, 6001))
    lo, hi = post.ci(0.95)[0]
    print(f"{name:>15}: mean {post.mean[0]:6.3f}, 95% interval ({lo:6.2f}, {hi:6.2f})")
