//! Generates both toy datasets, applies the two preprocessing baselines and
//! writes one dataset to CSV.

use fairkern::datasets::{baseline_frl, baseline_osv, gen_toy1, gen_toy2, write_csv, Toy1Config, Toy2Config};
use fairkern::metrics::pearson_corr;

fn main() -> fairkern::Result<()> {
    let toy1 = gen_toy1(&Toy1Config { seed: 1, ..Default::default() })?;
    println!("toy1: {} rows, inputs {:?}, sensitive {:?}", toy1.n(), toy1.feature_names, toy1.sensitive_names);
    println!("corr(y, x3) = {:.3}", pearson_corr(toy1.y.view(), toy1.s.column(0))?);

    let osv = baseline_osv(&toy1)?;
    let frl = baseline_frl(&toy1)?;
    println!("OSV keeps {:?}", osv.feature_names);
    for (name, col) in frl.feature_names.iter().zip(frl.x.columns()) {
        println!("FRL residual {name}: corr with x3 = {:+.2e}", pearson_corr(col, toy1.s.column(0))?);
    }

    let toy2 = gen_toy2(&Toy2Config { seed: 1, ..Default::default() })?;
    let path = std::env::temp_dir().join("fairkern_toy2.csv");
    write_csv(&toy2, &path)?;
    println!("toy2: wrote {} rows to {}", toy2.n(), path.display());
    Ok(())
}
