//! A small cross-validated sweep comparing plain, preprocessed and fair
//! kernel regression on toy dataset 1.

use fairkern::datasets::Toy1Config;
use fairkern::experiments::{compare_methods, format_comparison, log_grid, DataSource, GpSweepSettings, Method, Preprocess, Split, SweepSpec, ThetaGrid};

fn spec(method: Method, eta_grid: Vec<f64>, preprocess: Preprocess) -> SweepSpec {
    SweepSpec {
        method,
        eta_grid,
        theta_grid: ThetaGrid::Heuristic { draws: 4, sigma_log: 0.5 },
        lambda_grid: log_grid(1e-3, 1.0, 4),
        trials: 3,
        seed: 17,
        split: Split { train: 200, test: 200 },
        theta_l: None,
        preprocess,
        folds: 4,
        eps: 1e-6,
        gp: GpSweepSettings::default(),
    }
}

fn main() -> fairkern::Result<()> {
    let specs = [
        spec(Method::Krr, vec![0.0], Preprocess::None),
        spec(Method::Krr, vec![0.0], Preprocess::Osv),
        spec(Method::Krr, vec![0.0], Preprocess::Frl),
        spec(Method::Fkl, vec![0.2, 20.0, 200.0], Preprocess::None),
    ];
    let rows = compare_methods(&specs, &DataSource::Toy1(Toy1Config::default()))?;
    print!("{}", format_comparison(&rows));
    Ok(())
}
