use hyperlab_core::solver::*;
fn main() {
    // convergence
    let exact = dalembert_solution(1.0);
    let q = RadialFormCoeffs::zero();
    let mut prev: Option<f64> = None;
    for k in 0..4 {
        let dr = 1.0 / (50.0 * 2f64.powi(k));
        let mut state = state_from_closed_form(&exact, 2.0, dr, 4.5);
        let dt = 0.8 * dr;
        let steps = ((4.0 - 2.0) / dt).round() as usize;
        for _ in 0..steps {
            step(&mut state, &q, dt, None).unwrap();
        }
        let mut err = 0.0f64;
        for i in 0..state.u().len() {
            let (ue, _) = exact(state.t, i as f64 * dr);
            err = err.max((state.u()[i] - ue).abs());
        }
        let rate = prev.map(|p: f64| p / err).unwrap_or(0.0);
        println!("dr = 1/{:>4}  err = {:.3e}  ratio = {:.2}", (1.0/dr) as i64, err, rate);
        prev = Some(err);
    }
    // stride invariance measurement
    let dr = 1.0 / 100.0;
    let s = 3.0;
    let mut vals = Vec::new();
    for stride in [2usize, 1] {
        let state = state_from_closed_form(&exact, 2.0, dr, 8.0);
        let cfg = RunConfig { dr, s_max: s, n_slices: 1, r_max: 8.0, output_stride: stride, ..RunConfig::default() };
        let result = run_from_state(&cfg, state, &[s], None).unwrap();
        vals.push((result.sups[0].sup_u, result.reports[0].e_flat));
    }
    let rel_sup = (vals[0].0 - vals[1].0).abs() / vals[0].0;
    let rel_e = (vals[0].1 - vals[1].1).abs() / vals[0].1;
    println!("stride halving: rel sup diff = {rel_sup:.3e}, rel E diff = {rel_e:.3e}");
    println!("support after clamp test:");
    let mut state = state_from_closed_form(&exact, 2.0, 1.0/50.0, 4.0);
    let dt = 0.8/50.0;
    for _ in 0..300 { step(&mut state, &q, dt, None).unwrap(); }
    println!("t = {:.3}, support_radius = {:.3}, t-1.2 = {:.3}", state.t, state.support_radius(), state.t-1.2);
}
