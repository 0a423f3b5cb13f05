//! Compares the HSIC-penalized and the NOCCO-normalized fair kernel
//! regressions on toy dataset 2 at matched regularization.

use fairkern::datasets::{gen_toy2, Toy2Config};
use fairkern::fair_krr::{fit_fkl, predict_fkl, FairKrrConfig};
use fairkern::kernels::{gram_self, median_heuristic, KernelSpec};
use fairkern::metrics::{hsic_linear_predictions, rmse};
use fairkern::nfkl::{fit_nfkl, predict_nfkl, NfklConfig};

fn main() -> fairkern::Result<()> {
    let train = gen_toy2(&Toy2Config { seed: 4, ..Default::default() })?;
    let test = gen_toy2(&Toy2Config { seed: 5, ..Default::default() })?;
    let n = train.n();
    let kx = KernelSpec::rbf(median_heuristic(train.x.view())?);
    let ks = KernelSpec::rbf(median_heuristic(train.s.view())?);
    let l = gram_self(&ks, test.s.view())?.values;
    let lambda = 0.05;

    println!("{:>8}  {:>18}  {:>18}", "eta", "fkl rmse / hsic", "nfkl rmse / hsic");
    for eta in [0.0, 0.1, 1.0, 10.0, 100.0] {
        let f = fit_fkl(train.x.view(), train.y.view(), train.s.view(), &FairKrrConfig::new(lambda, eta, kx.clone(), ks.clone()))?;
        let pf = predict_fkl(&f, test.x.view())?;
        // same ridge strength, expressed in the normalized method's convention
        let g = fit_nfkl(train.x.view(), train.y.view(), train.s.view(), &NfklConfig::from_scaled_lambda(lambda, n, eta, kx.clone(), ks.clone()))?;
        let pg = predict_nfkl(&g, test.x.view())?;
        println!(
            "{eta:>8}  {:>8.3} / {:.2e}  {:>8.3} / {:.2e}",
            rmse(pf.view(), test.y.view())?,
            hsic_linear_predictions(pf.view(), l.view())?,
            rmse(pg.view(), test.y.view())?,
            hsic_linear_predictions(pg.view(), l.view())?,
        );
    }
    Ok(())
}
