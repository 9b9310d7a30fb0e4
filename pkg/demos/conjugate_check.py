"""Compare HMC draws on a Dirichlet-multinomial model with the closed-form posterior."""

import numpy as np

from smabayes.bayes import DirichletMultinomialModel, DirichletParams, dirichlet_multinomial_posterior
from smabayes.diagnostics import mcse_mean, split_rhat
from smabayes.hmc import HmcConfig, sample_model

prior, counts = DirichletParams([1, 1, 1]), [5, 3, 2]
post = dirichlet_multinomial_posterior(prior, counts)
exact = np.asarray(post.alpha) / np.sum(post.alpha)

chains = sample_model(DirichletMultinomialModel(prior, counts), HmcConfig(seed=7))
draws = np.stack([c.draws for c in chains])

print("component  exact    hmc      mcse     rhat")
for i in range(3):
    x = draws[:, :, i]
    print(f"theta[{i + 1}]   {exact[i]:.4f}   {x.mean():.4f}   {mcse_mean(x):.4f}   {split_rhat(x):.3f}")
print("accept rates:", ", ".join(f"{c.accept_rate:.2f}" for c in chains))
