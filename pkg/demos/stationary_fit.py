"""Fit the stationary benchmark once and compare against the oracle smoother.

Run with ``python demos/stationary_fit.py [seed]``; takes about 15 seconds.
"""

import sys

from bfda import (SamplerConfig, SimSpec, bls_oracle, default_hyperparams, run_chain, simulate,
                  summarize, true_moments)
from bfda.metrics import evaluate_replicate, rimse_signals


def main(seed=1):
    spec = SimSpec(seed=seed)
    truth, data = simulate(spec)
    mu, Sigma = true_moments(spec)

    hyper = default_hyperparams(data)
    print(f"empirical Bayes: noise {hyper.noise_var:.3f}, rho {hyper.rho_hat:.3f}, "
          f"nu {hyper.nu_hat:.3f}, sigma_s2 {hyper.sigma_s2_hat:.2f}")

    chain = run_chain(data, hyper, SamplerConfig(seed=seed))
    summary = summarize(chain)
    report = evaluate_replicate(summary, truth, mu, Sigma)

    bls, _ = bls_oracle(data, mu, Sigma, spec.sigma_eps ** 2)
    raw = rimse_signals(data.value_matrix(), truth, spec.grid)
    oracle = rimse_signals(bls, truth, spec.grid)

    s = summary.sigma_eps2
    print(f"noise variance: posterior mean {float(s.mean):.3f}, "
          f"95% CI [{float(s.lower):.3f}, {float(s.upper):.3f}], truth {spec.sigma_eps ** 2:.3f}")
    print(f"signal RIMSE: raw {raw:.4f}, Bayesian {report.rimse_signals:.4f}, oracle {oracle:.4f}")
    print(f"mean RIMSE {report.rimse_mean:.4f}, covariance RIMSE {report.rimse_cov:.4f}, "
          f"correlation RIMSE {report.rimse_cor:.4f}")
    print(f"coverage: signals {report.coverage_z:.3f}, mean {report.coverage_mu:.3f}, "
          f"covariance {report.coverage_sigma:.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 1)
