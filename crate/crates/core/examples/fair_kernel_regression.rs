//! Fits fair kernel ridge regression on toy dataset 1 along a grid of
//! fairness weights and prints accuracy against dependence on the
//! sensitive input.

use fairkern::datasets::{gen_toy1, Toy1Config};
use fairkern::fair_krr::{fit_fkl, predict_fkl, FairKrrConfig};
use fairkern::kernels::{gram_self, median_heuristic, KernelSpec};
use fairkern::metrics::{hsic_linear_predictions, pearson_corr, r_squared};

fn main() -> fairkern::Result<()> {
    let train = gen_toy1(&Toy1Config { seed: 11, ..Default::default() })?;
    let test = gen_toy1(&Toy1Config { seed: 12, ..Default::default() })?;
    let kx = KernelSpec::rbf(median_heuristic(train.x.view())?);
    let ks = KernelSpec::rbf(median_heuristic(train.s.view())?);
    let l_test = gram_self(&ks, test.s.view())?.values;
    let truth = test.f_true.as_ref().expect("toy data carries the noiseless target");

    println!("{:>8} {:>8} {:>8} {:>10} {:>8}", "eta", "r2_obs", "r2_true", "hsic", "corr");
    for eta in [0.0, 0.2, 2.0, 20.0, 200.0] {
        let model = fit_fkl(train.x.view(), train.y.view(), train.s.view(), &FairKrrConfig::new(0.1, eta, kx.clone(), ks.clone()))?;
        let pred = predict_fkl(&model, test.x.view())?;
        println!(
            "{eta:>8} {:>8.3} {:>8.3} {:>10.2e} {:>+8.3}",
            r_squared(pred.view(), test.y.view())?,
            r_squared(pred.view(), truth.view())?,
            hsic_linear_predictions(pred.view(), l_test.view())?,
            pearson_corr(pred.view(), test.s.column(0))?,
        );
    }
    Ok(())
}
