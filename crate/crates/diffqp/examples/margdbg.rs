use diffqp::grad::{backward_fresh, backward_reuse, BackwardSeeds};
use diffqp::ipm::{solve, SolverSettings};
use diffqp::qp::random_feasible_qp;

fn main() {
    let settings = SolverSettings::default();
    let mut worst_z: f64 = 0.0;
    let mut worst_nu: f64 = 0.0;
    let mut worst_scaled: f64 = 0.0;
    let mut worst_active: f64 = 0.0; // raw d_lam restricted to lambda >= 1e-3
    let mut screened = 0;
    for seed in 0..50u64 {
        let qp = random_feasible_qp(6, 2, 5, 40_000 + seed);
        let r = solve(&qp, &settings).unwrap();
        let seeds = BackwardSeeds::new((0..6).map(|i| 1.0 + i as f64 * 0.3).collect());
        let fresh = match backward_fresh(&qp, &r.point.z, &r.point.lambda, &r.point.nu, &seeds) {
            Ok(d) => d, Err(_) => { screened += 1; continue; }
        };
        let reuse = backward_reuse(&r, &seeds).unwrap();
        let rel = |a: &[f64], b: &[f64]| -> f64 {
            let sc = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / sc
        };
        worst_z = worst_z.max(rel(&fresh.d_z, &reuse.d_z));
        worst_nu = worst_nu.max(rel(&fresh.d_nu, &reuse.d_nu));
        let sf: Vec<f64> = r.point.lambda.iter().zip(&fresh.d_lam).map(|(l, d)| l * d).collect();
        let sr: Vec<f64> = r.point.lambda.iter().zip(&reuse.d_lam).map(|(l, d)| l * d).collect();
        worst_scaled = worst_scaled.max(rel(&sf, &sr));
        let sc = fresh.d_lam.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..qp.p {
            if r.point.lambda[i] >= 1e-3 {
                worst_active = worst_active.max((fresh.d_lam[i] - reuse.d_lam[i]).abs() / sc);
            }
        }
    }
    println!("worst rel dev: d_z {worst_z:.2e}  d_nu {worst_nu:.2e}  lam*d_lam {worst_scaled:.2e}  active d_lam {worst_active:.2e}  (screened {screened})");
}
