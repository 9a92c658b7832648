"""Walk through how much historical information the normalized power prior borrows.

Run with ``python3 demos/borrowing_walkthrough.py``. Prints, for a binomial
current study, the posterior of delta as the historical success rate moves
away from the current one, then contrasts it with the unnormalized joint
prior whose answer depends on an arbitrary likelihood constant.
"""

import math

import numpy as np

from npprior.conjugate import delta_posterior
from npprior.jpp import LikelihoodForm, jpp_delta_posterior
from npprior.models import BetaPrior, BinomialData, DeltaPrior

current = BinomialData(n=30, y=15)
prior, dprior = BetaPrior(1, 1), DeltaPrior.uniform()

print("historical y0/n0   E[delta | data]   mode")
for y0 in (15, 12, 9, 6, 3):
    hist = BinomialData(n=30, y=y0)
    post = delta_posterior(hist, current, prior, dprior)
    print(f"   {y0:2d}/30            {post.mean:6.3f}        {post.mode:5.3f}")

print("\nmultiplying the historical likelihood by a constant k:")
hist = BinomialData(n=30, y=12)
form = LikelihoodForm.of("bernoulli_product")
for k in (1e-6, 1.0, 1e6):
    npp = delta_posterior(hist, current, prior, dprior, log_scale=hist.n * math.log(k))
    jpp = jpp_delta_posterior(hist, current, prior, dprior, form, log_scale=hist.n * math.log(k))
    print(f"  k={k:8.0e}  normalized {npp.mean:.4f}  joint {jpp.mean:.4f}")

grid = np.linspace(0, 1, 6)
post = delta_posterior(hist, current, prior, dprior)
print("\nposterior CDF of delta on a coarse grid:")
print("  " + "  ".join(f"{d:.1f}:{v:.2f}" for d, v in zip(grid, np.interp(grid, post.cdf_x, post.cdf))))
