//! Optimizes a plain and a fair ARD Gaussian process on toy dataset 1 and
//! prints per-input lengthscales and the dependence of the posterior mean on
//! the sensitive input.

use fairkern::datasets::{gen_toy1, Toy1Config};
use fairkern::fair_gp::{ard_relevance_report, gp_fit, optimize_hyperparams, posterior_predict, unfairness, FairGpConfig};
use fairkern::kernels::{median_heuristic, KernelSpec};
use fairkern::metrics::rmse;

fn main() -> fairkern::Result<()> {
    let train = gen_toy1(&Toy1Config { n: 150, seed: 21, ..Default::default() })?;
    let test = gen_toy1(&Toy1Config { n: 300, seed: 22, ..Default::default() })?;
    let ks = KernelSpec::rbf(median_heuristic(train.s.view())?);
    let med = median_heuristic(train.x.view())?;

    for eta in [None, Some(10.0)] {
        let mut cfg = FairGpConfig::new(KernelSpec::ard(vec![med; 3]), ks.clone(), 0.1, 0.0);
        cfg.optimizer.restarts = 2;
        cfg.optimizer.tie_eta = eta;
        let best = optimize_hyperparams(train.x.view(), train.y.view(), train.s.view(), &cfg)?;
        let model = gp_fit(train.x.view(), train.y.view(), train.s.view(), &best.config)?;
        let (mean, var) = posterior_predict(&model, test.x.view())?;
        println!("eta {:?}: nlml {:.2}, noise {:.3}, delta {:.3e}", eta, best.nlml, best.config.noise, best.config.delta);
        for r in ard_relevance_report(&model, Some(&train.feature_names))? {
            println!("  {:<4} lengthscale {:>10.3}", r.name, r.lengthscale);
        }
        println!(
            "  test rmse {:.3}, unfairness {:.4}, mean predictive variance {:.3}",
            rmse(mean.view(), test.y.view())?,
            unfairness(mean.view(), test.s.view(), &ks)?,
            var.mean().unwrap_or(0.0)
        );
    }
    Ok(())
}
