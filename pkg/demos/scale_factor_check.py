"""Path-sampling estimate of the log normalizing constant against its closed form.

Run with ``python3 demos/scale_factor_check.py``.
"""

from npprior.models import BetaPrior, BinomialData
from npprior.numkit import RngStream
from npprior.scalefactor import BinomialPoweredSampler, closed_form_gap, design_knots, estimate_log_c

sampler = BinomialPoweredSampler(BinomialData(40, 20), BetaPrior(1, 1))
for knots in (8, 16, 64):
    est = estimate_log_c(sampler, design_knots(knots, 2.0), 5000, RngStream(7))
    gap = closed_form_gap(est, sampler, points=21)
    print(f"S={knots:3d}  max |estimate - exact| = {gap.max_gap:.4f}")
