use hyperlab_core::energy::*;
use hyperlab_core::frame::ConePoint;
use hyperlab_core::identities::{curved_analysis_from_jets, IdentityError, TestField};
use hyperlab_core::jets::Jet;
use std::rc::Rc;

fn main() {
    let eps = 1e-4;
    let q = hyperlab_core::identities::reference_null_form();
    let field = move |p: &ConePoint, k: usize| -> Result<Jet, IdentityError> {
        Ok(TestField::OutgoingWave.jet(p, k)?.scale(eps))
    };
    for s in [4.0, 5.66, 8.0, 11.3, 16.0, 22.6, 32.0] {
        let r_hi = (s * s - 1.2f64 * 1.2) / (2.0 * 1.2) + 1.0;
        let dr = (r_hi / 2000.0).max(0.002);
        let slice = slice_from_closed_form(&field, s, dr, r_hi).unwrap();
        let e_flat = flat_conformal_energy(&slice).unwrap().e_flat;
        // decompose numerator groups
        let (mut r_l1, mut s_l1, mut t_l1) = (0.0, 0.0, 0.0);
        let mut vals_r = vec![]; let mut vals_s = vec![]; let mut vals_t = vec![];
        for node in &slice.nodes {
            if node.r < 1e-12 { vals_r.push(0.0); vals_s.push(0.0); vals_t.push(0.0); continue; }
            let p = ConePoint::unchecked(node.t, [node.r, 0.0, 0.0]);
            let u_jet = node_jet(node, [1.0,0.0,0.0], 3).unwrap();
            let mut grads = vec![];
            for ax in 0..4 { grads.push(u_jet.derivative(ax).unwrap()); }
            let mut rows = vec![];
            for a in 0..4 {
                let mut row = vec![];
                for b in 0..4 {
                    let mut acc = Jet::constant(p, 2, 0.0).unwrap();
                    for (g, du) in grads.iter().enumerate() {
                        if q.coeffs[a][b][g] != 0.0 { acc = acc.checked_add(&du.truncated(2).scale(q.coeffs[a][b][g])).unwrap(); }
                    }
                    row.push(acc);
                }
                rows.push(<[Jet;4]>::try_from(row).unwrap());
            }
            let h_jets = <[[Jet;4];4]>::try_from(rows).unwrap();
            let (_, terms) = curved_analysis_from_jets(&u_jet, &h_jets, &p).unwrap();
            let kn = terms.kg_u + terms.n_g * terms.u;
            vals_r.push(terms.r_g.abs() * node.r * node.r);
            vals_s.push((kn * terms.s_g).abs() * node.r * node.r);
            vals_t.push(terms.t_g.abs() * node.r * node.r);
        }
        let simpson = |v: &[f64]| -> f64 {
            let mut acc = 0.0;
            for k in 0..(v.len()-1)/2 { acc += slice.dr/3.0*(v[2*k]+4.0*v[2*k+1]+v[2*k+2]); }
            4.0*std::f64::consts::PI*acc
        };
        r_l1 = simpson(&vals_r); s_l1 = simpson(&vals_s); t_l1 = simpson(&vals_t);
        let se = e_flat.sqrt();
        println!("s={s:6.2}  R/E½={:)<12.4e} S/E½={:.4e} T/E½={:.4e}  x s^2: {:.3e} {:.3e} {:.3e}",
            r_l1/se, s_l1/se, t_l1/se, r_l1/se*s*s, s_l1/se*s*s, t_l1/se*s*s);
    }
}
