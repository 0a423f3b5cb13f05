//! Dependence measures on a dependent and an independent pair of samples.

use fairkern::datasets::rng_for;
use fairkern::kernels::{gram_self, median_heuristic, KernelSpec};
use fairkern::metrics::{hsic, mutual_information_plugin, nocco, pearson_corr, DEFAULT_MI_BINS};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

fn main() -> fairkern::Result<()> {
    let n = 300;
    let mut rng = rng_for(3, 0);
    let a: Array2<f64> = Array2::from_shape_simple_fn((n, 1), || StandardNormal.sample(&mut rng));
    let noise: Array2<f64> = Array2::from_shape_simple_fn((n, 1), || StandardNormal.sample(&mut rng));
    // quadratic link: nonlinear dependence with near-zero correlation
    let dependent = a.mapv(|v| v * v) + &noise * 0.3;
    let independent: Array2<f64> = Array2::from_shape_simple_fn((n, 1), || StandardNormal.sample(&mut rng));

    let ka = gram_self(&KernelSpec::rbf(median_heuristic(a.view())?), a.view())?.values;
    for (label, b) in [("dependent", &dependent), ("independent", &independent)] {
        let kb = gram_self(&KernelSpec::rbf(median_heuristic(b.view())?), b.view())?.values;
        println!(
            "{label:<12} hsic {:.5}  nocco {:.4}  corr {:+.3}  mi {:.3}",
            hsic(ka.view(), kb.view())?,
            nocco(ka.view(), kb.view(), 1e-3)?,
            pearson_corr(a.column(0), b.column(0))?,
            mutual_information_plugin(a.column(0), b.column(0), DEFAULT_MI_BINS)?,
        );
    }
    Ok(())
}
