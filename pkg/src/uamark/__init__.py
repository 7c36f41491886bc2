"""uamark: uncertainty-aware decision making under model uncertainty.

Library layout:

* `mathkit` — counter-based RNG, normal special functions, Cholesky.
* `risk` — entropic / mean-variance / VaR / tail-mean CVaR measures.
* `gauss1d` — closed-form robust strategies in the 1-d Gaussian lab.
* `gausshd` — the d-dimensional CVaR strategy with its hinge condition.
* `modeldist` — model distributions: drift uncertainty, subsampling, bootstrap.
* `cvarsgd` — memory-bounded stochastic gradient ascent on tail objectives.
* `nnpolicy` — minimal feedforward policy network with exact reverse-mode gradients.
* `hedgelab` — Heston cliquet hedging lab comparing plug-in / robust / oracle training.
* `cli` — the `uamark` experiment command line.
"""

__version__ = "0.1.0"
