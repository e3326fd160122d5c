use wcreg_core::problems::{self, Problem};
use wcreg_core::loss::{smooth_linf_loss, TrainConfig};
use wcreg_core::lbfgs::{multistart_minimize, LbfgsConfig};
use wcreg_core::domain::Dataset;
use wcreg_core::models::Surrogate;
use wcreg_core::active::certify_wce;
use wcreg_core::direct::DirectConfig;
use rand::SeedableRng;

fn main() {
    let Problem::Fit(p) = problems::build("scalar-example").unwrap() else { panic!() };
    // dense training set
    let xs: Vec<Vec<f64>> = (0..400).map(|i| vec![-10.0 + 20.0 * i as f64 / 399.0]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (p.target)(x)).collect();
    println!("target range: [{:.3}, {:.3}]", ys.iter().cloned().fold(f64::INFINITY, f64::min), ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let data = Dataset::from_initial(xs, ys).unwrap();
    let cfg = TrainConfig { gamma: 10.0, nu: 0.0, l2_reg: 1e-8, sign_eta: None };
    let model = p.model.clone();
    let obj = |t: &[f64]| smooth_linf_loss(&model, t, &data, &cfg);
    let lb = LbfgsConfig { max_iters: 3000, n_starts: 40, ..Default::default() };
    let sampler = |i: usize| {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(i as u64 * 7 + 1);
        model.init_params(&mut r)
    };
    let (best, idx) = multistart_minimize(&obj, &sampler, &lb).unwrap();
    println!("best loss {:.4} from start {idx}", best.value);
    let target = p.target.clone();
    let cert = certify_wce(&move |x: &[f64]| target(x), &model, &best.theta, &p.input_box, &DirectConfig::with_budget(20000)).unwrap();
    println!("certified WCE of heavy fit: {:.4}", cert.value_star);
}
