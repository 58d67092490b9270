use hyperlab_core::solver::*;
fn main() {
    let exact = dalembert_solution(1.0);
    let dr = 1.0 / 100.0;
    let s = 3.0;
    let mut state = state_from_closed_form(&exact, 2.0, dr, 8.0);
    let mut rec = SliceRecorder::new(&[s], dr, 1.2, 8.0, 2, RadialFormCoeffs::zero(), false, 4000);
    rec.observe(&state).unwrap();
    let dt = 0.8 * dr;
    while rec.pending_count() > 0 && state.t < 10.0 {
        step(&mut state, &RadialFormCoeffs::zero(), dt, None).unwrap();
        rec.observe(&state).unwrap();
    }
    let slice = &rec.completed[0];
    let maxutt = slice.data.nodes.iter().fold(0.0f64, |m, n| m.max(n.d[2][0].abs()));
    println!("nodes = {}, max |u_tt| = {maxutt:.4e}, consistency = {:.4e}", slice.data.nodes.len(), slice.consistency);
    let mut shown = 0;
    for n in &slice.data.nodes {
        let lap = if n.r < 1e-12 { 3.0*n.d[0][2] } else { n.d[0][2] + 2.0*n.d[0][1]/n.r };
        let scale = n.d[2][0].abs().max(lap.abs());
        if scale > 1e-4*maxutt {
            let rel = (n.d[2][0]-lap).abs()/scale;
            if rel > 0.01 && shown < 12 {
                let (ue, _) = exact(n.t, n.r);
                println!("r={:.3} t={:.4} u={:+.3e} (exact {:+.3e}) utt={:+.4e} lap={:+.4e} rel={:.3}", n.r, n.t, n.d[0][0], ue, n.d[2][0], lap, rel);
                shown += 1;
            }
        }
    }
}
