use hyperlab_core::solver::*;
use std::time::Instant;
fn main() {
    let exact = dalembert_solution(1.0);
    let dr = 1.0 / 400.0;
    // pure evolution, no recorder
    let mut state = state_from_closed_form(&exact, 2.0, dr, 3.0);
    let q = RadialFormCoeffs::zero();
    let dt = 0.8 * dr;
    let t0 = Instant::now();
    let steps = ((30.0 - 2.0) / dt) as usize;
    for _ in 0..steps {
        step(&mut state, &q, dt, None).unwrap();
    }
    println!("evolution to t=30: {:.2}s for {} steps, final window {:?}", t0.elapsed().as_secs_f64(), steps, state.active());
    // with recorder via run_from_state
    let state = state_from_closed_form(&exact, 2.0, dr, 3.0);
    let cfg = RunConfig { dr, s_max: 9.0, n_slices: 5, r_max: 1e9, ..RunConfig::default() };
    let t0 = Instant::now();
    let slices = [2.0, 3.0, 5.0, 7.0, 9.0];
    let r = run_from_state(&cfg, state, &slices, None).unwrap();
    println!("run to s=9 (t~{:.0}): {:.2}s, steps {}", (81.0f64 + 33.0*33.0).sqrt(), t0.elapsed().as_secs_f64(), r.steps);
}
