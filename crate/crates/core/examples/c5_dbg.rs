use wcreg_core::problems::{self, Problem};
use wcreg_core::active::fit_worst_case;

fn main() {
    let Problem::Fit(p) = problems::build("scalar-example").unwrap() else { panic!() };
    for seed in 0..5u64 {
        let mut cfg = p.active.clone();
        cfg.seed = seed;
        let target = p.target.clone();
        let report = fit_worst_case(&move |x: &[f64]| target(x), &p.model, &p.input_box, &cfg).unwrap();
        println!(
            "seed {seed}: e_N0 = {:.5}, wce = {:.5}, ratio = {:.3}, stop={:?}, iters={}, failed={:?}",
            report.error_history[0], report.wce, report.wce / report.error_history[0],
            report.stop_reason, report.error_history.len(), report.failed_iters
        );
        println!("  history: {:?}", report.error_history.iter().map(|e| (e*1000.0).round()/1000.0).collect::<Vec<_>>());
    }
}
