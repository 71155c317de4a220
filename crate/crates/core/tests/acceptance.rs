//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so the lines survive the test harness output capture.
//!
//! Literal verdicts are reported as computed. Where a literal check fails, a
//! `diag` line carries the comparison that the numerics do support.

use qcurv_core::assembler::*;
use qcurv_core::balancing::*;
use qcurv_core::bubbles::{u_sph, KernelIndex};
use qcurv_core::constants::sphere_area;
use qcurv_core::delaunay::neck_sweep;
use qcurv_core::fit::log_slope;
use qcurv_core::interactions::*;
use qcurv_core::kernels::{riesz_kernel_cyl, singular_kernel_cyl};
use qcurv_core::quad::integrate_to_inf;
use qcurv_core::toda::{weighted_norm, TodaOperator, WeightedSeq};
use qcurv_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::time::Instant;

struct Out {
    passed: usize,
    rows: Vec<(usize, bool)>,
}

impl Out {
    fn line(&mut self, id: usize, pass: bool, msg: String, t0: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        let _ = writeln!(std::io::stderr(), "criterion {id:>2}: {tag} | {msg} [{:.1?}]", t0.elapsed());
        self.passed += pass as usize;
        self.rows.push((id, pass));
    }

    fn diag(&self, msg: String) {
        let _ = writeln!(std::io::stderr(), "              diag | {msg}");
    }
}

fn e1(s: f64) -> Vec<f64> {
    vec![s, 0.0, 0.0, 0.0, 0.0]
}

fn unit_consts() -> InteractionConstants {
    InteractionConstants { a1: 1.0, a2: 1.0, a3: -1.0, method: ConstMethod::ClosedIntegral, est_error: 0.0 }
}

fn within(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

fn bubble_fixed_point(out: &mut Out, p: &ProblemParams, ctx: &DualContext) {
    let t0 = Instant::now();
    let axis = Axis::new(vec![0.0; 5], e1(1.0)).unwrap();
    let u = |x: &[f64]| u_sph(x.iter().map(|a| a * a).sum::<f64>().sqrt(), p);
    let dual = AxisymmetricDual::new(ctx, &u, axis, &[0.0], 30.0, &GridOptions::default());
    let pts = [
        e1(0.0),
        e1(0.1),
        e1(-0.5),
        vec![0.3, 0.4, 0.0, 0.0, 0.0],
        e1(1.0),
        vec![0.0, 1.5, 0.0, 0.0, 0.0],
        vec![-2.0, 1.0, 0.0, 0.0, 0.0],
        e1(4.0),
        vec![3.0, 6.0, 0.0, 0.0, 0.0],
        e1(-20.0),
    ];
    let mut worst = 0.0f64;
    for x in &pts {
        let v = dual.apply(x).unwrap();
        worst = worst.max((v - u(x)).abs() / u(x));
    }
    let mut radial = 0.0f64;
    for &t in &[-3.0, -1.0, 0.0, 0.5, 2.0] {
        let v = dual_apply_radial(ctx, |s| s.cosh().powf(-p.gamma_s), t, 1e-10).unwrap();
        let exact = u_sph((-t as f64).exp(), p);
        radial = radial.max((v - exact).abs() / exact);
    }
    out.line(1, worst <= 1e-3, format!("dual(u_sph) sup rel err {worst:.2e} over 10 points (radial form {radial:.2e}), tol 1e-3"), t0);
}

fn kernel_slopes(out: &mut Out, p: &ProblemParams) {
    let t0 = Instant::now();
    let ts: Vec<f64> = (0..=16).map(|i| 8.0 + 0.5 * i as f64).collect();
    let r: Vec<f64> = ts.iter().map(|&t| riesz_kernel_cyl(t, p, 1e-10).unwrap()).collect();
    let k: Vec<f64> = ts.iter().map(|&t| singular_kernel_cyl(t, p, 1e-10, 1e-3).unwrap()).collect();
    let sr = log_slope(&ts, &r).unwrap().slope;
    let sk = log_slope(&ts, &k).unwrap().slope;
    let pass = within(sr, -p.gamma_s, 0.02) && within(sk, -p.gamma_s_dual, 0.02);
    out.line(
        2,
        pass,
        format!("slope R {sr:.5} (target {:.1}), slope K {sk:.5} (target {:.1}), tol 2%", -p.gamma_s, -p.gamma_s_dual),
        t0,
    );
}

fn neck_law(out: &mut Out, p: &ProblemParams) {
    let t0 = Instant::now();
    let ls = [2.0, 2.5, 3.0, 3.5, 4.0];
    let sw = neck_sweep(&ls, p, 800, 1e-11).unwrap();
    let g = p.gamma_s;
    let failed: Vec<String> = sw.rows.iter().filter(|r| r.eps.is_none()).map(|r| format!("L={}", r.l)).collect();
    let check = |eps: f64, psi: f64| within(eps, -g, 0.05) && psi / -g >= 1.05;
    let (es, ps) = (sw.eps_fit.map_or(f64::NAN, |f| f.slope), sw.psi_fit.map_or(f64::NAN, |f| f.slope));
    let pass = failed.is_empty() && check(es, ps);
    let mut msg = format!("eps slope {es:.4}, psi slope {ps:.4} (ratio {:.3}) at M=800", ps / -g);
    if !failed.is_empty() {
        msg += &format!("; no periodic solution at {}", failed.join(", "));
    }
    out.line(3, pass, msg, t0);
    let ok: Vec<_> = sw.rows.iter().filter(|r| r.l >= 2.5 && r.eps.is_some()).collect();
    let x: Vec<f64> = ok.iter().map(|r| r.l).collect();
    let e = log_slope(&x, &ok.iter().map(|r| r.eps.unwrap()).collect::<Vec<_>>()).unwrap().slope;
    let s = log_slope(&x, &ok.iter().map(|r| r.psi_sup.unwrap()).collect::<Vec<_>>()).unwrap().slope;
    out.diag(format!(
        "L in [2.5, 4]: eps slope {e:.4}, psi slope {s:.4} (ratio {:.3}) -> {}",
        s / -g,
        if check(e, s) { "pass" } else { "fail" }
    ));
}

fn constants(out: &mut Out) {
    let t0 = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, s) in [(5usize, 1.5f64), (7, 2.5)] {
        let p = derive_params(n, s).unwrap();
        let cl = InteractionConstants::closed(&p, 1e-10).unwrap();
        let or = InteractionConstants::oracle(&p, 1e-9).unwrap();
        let g2 = (cl.a2 - or.a2).abs() / cl.a2.abs();
        let g3 = (cl.a3 - or.a3).abs() / cl.a3.abs();
        pass &= cl.signs_ok() && g2 <= 0.02 && g3 <= 0.02;
        parts.push(format!(
            "({n},{s}) A1 {:.4} A2 {:.4}/{:.4} A3 {:.4}/{:.4} gaps {:.1e}/{:.3}",
            cl.a1, cl.a2, or.a2, cl.a3, or.a3, g2, g3
        ));
        let ratio = or.a3 / cl.a3;
        out.diag(format!("({n},{s}) oracle/closed A3 = {ratio:.5}, p = {:.5}", p.nonlin_exp));
    }
    out.line(4, pass, format!("signs and closed/oracle within 2%: {}", parts.join("; ")), t0);
}

fn psi_law(out: &mut Out, p: &ProblemParams) {
    let t0 = Instant::now();
    let z = psi(0.0, p, 1e-12).unwrap().abs();
    let ls: Vec<f64> = (0..=12).map(|k| 6.0 + 0.5 * k as f64).collect();
    let vs: Vec<f64> = ls.iter().map(|&l| psi(l, p, 1e-11).unwrap()).collect();
    let s = log_slope(&ls, &vs).unwrap().slope;
    out.line(5, z <= 1e-10 && within(s, -p.gamma_s, 0.03), format!("|Psi(0)| {z:.1e}, slope {s:.5} on [6,12], tol 3%"), t0);
}

fn balancing(out: &mut Out, p: &ProblemParams) {
    let t0 = Instant::now();
    let c = InteractionConstants::closed(p, 1e-11).unwrap();
    let g = p.gamma_s;
    let d = 3.0;
    let set = SingularSet::new(vec![vec![0.0; 5], e1(d)]).unwrap();
    let q = [1.0, 1.0];
    let r = solve_b1(&set, &q, &c, p, 1e-14).unwrap();
    let r_exact = d * c.a2.powf(-1.0 / (2.0 * g));
    let r_err = r.iter().map(|v| (v - r_exact).abs() / r_exact).fold(0.0, f64::max);
    let a0 = solve_b2(&set, &q, &r, &c, p).unwrap();
    // a0_0 = -(A3/A1) d^{-2g-1} R^{2g} e1 = -(A3/A1) / (A2 d) e1
    let a0_exact = -c.a3 / (c.a1 * c.a2 * d);
    let a0_err = ((a0[0][0] - a0_exact).abs() + (a0[1][0] + a0_exact).abs()) / a0_exact.abs();
    let jac = balance_jacobian(&set, &q, &r, &c, p).unwrap();
    let kernel_ok = jac.q_kernel_dim == 1 && jac.kernel_angle <= 1e-8;
    let lit = jac.literal_gap();
    let pass = r_err <= 1e-8 && a0_err <= 1e-8 && kernel_ok && lit <= 1e-8;
    out.line(
        6,
        pass,
        format!(
            "R rel err {r_err:.1e}, a0 rel err {a0_err:.1e}, q-kernel dim {} angle {:.1e}, |dF_q(R) - gamma q| = {lit:.3}",
            jac.q_kernel_dim, jac.kernel_angle
        ),
        t0,
    );
    out.diag(format!(
        "dF_q(R) = {:?}; Euler |dF_R R - 2 gamma q| = {:.1e}; own-radius |diag(dF_R) R - gamma q| = {:.1e}",
        jac.dfq_on_r.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>(),
        jac.euler_gap(),
        jac.own_radius_gap()
    ));
}

fn toda(out: &mut Out) {
    let t0 = Instant::now();
    let k = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = WeightedSeq::scalar((0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0.3);
    let mut worst = 0.0f64;
    let mut ratios = Vec::new();
    let target = (-2.0 * (0.5 - 0.1) * 2.0f64).exp();
    for op in [TodaOperator::translation(3.0, k), TodaOperator::dilation(k)] {
        let a = op.invert(&b, 0.3).unwrap();
        let back = op.apply(&a).unwrap();
        let diff = WeightedSeq::scalar(back.component(0).iter().zip(b.component(0)).map(|(x, y)| x - y).collect(), 0.0);
        worst = worst.max(weighted_norm(&diff));
        ratios.push(op.inverse_induced_norm(0.5) / op.inverse_induced_norm(0.1));
    }
    let ratio_ok = |r: f64| r <= 2.0 * target && r >= 0.5 * target;
    let pass = worst <= 1e-10 && ratios.iter().all(|r| ratio_ok(*r));
    out.line(
        7,
        pass,
        format!(
            "apply(invert) err {worst:.1e} at K=200; norm ratio tau 0.5/0.1: translation {:.3}, dilation {:.3}, target {target:.3} within x2",
            ratios[0], ratios[1]
        ),
        t0,
    );
}

fn residual_and_beta(out: &mut Out, p: &ProblemParams, ctx: &DualContext) {
    let t0 = Instant::now();
    let g = p.gamma_s;
    let c = unit_consts();
    let d = 3.0;
    let set = SingularSet::new(vec![vec![0.0; 5], e1(d)]).unwrap();
    let opts = AssemblyOptions::default();
    let w_lit = WeightSpec::with_default(0.1, WeightKind::StarStar, p).unwrap();
    let w_diag = WeightSpec::with_default(0.1, WeightKind::Residual, p).unwrap();
    let spec = SampleSpec::default();
    let b00 = KernelIndex { i: 0, j: 0, ell: 0 };
    let b10 = KernelIndex { i: 1, j: 0, ell: 0 };
    let run = |q: [f64; 2], l: f64| {
        let bal = BalancedConfig::from_parts(&set, &q, vec![d, d], l, &c, p).unwrap();
        let u = assemble(&set, &bal, None, p, &opts).unwrap();
        let lit = residual_sampled(&u, ctx, &w_lit, &spec, 0).unwrap();
        let dg = residual_sampled(&u, ctx, &w_diag, &spec, 2).unwrap();
        let beta = [beta_projection(&u, &b00).unwrap(), beta_projection(&u, &b10).unwrap()];
        (lit, dg, beta)
    };
    let ls = [2.5, 3.0, 3.5];
    let bal: Vec<_> = ls.iter().map(|&l| run([1.0, 1.0], l)).collect();
    let unb = run([1.2, 1.0], 3.5);

    let lit: Vec<f64> = bal.iter().map(|r| r.0.norm.total).collect();
    let dg: Vec<f64> = bal.iter().map(|r| r.1.norm.total).collect();
    let s_lit = log_slope(&ls, &lit).unwrap().slope;
    let s_dg = log_slope(&ls, &dg).unwrap().slope;
    let ratio_lit = unb.0.norm.total / lit[2];
    let ratio_dg = unb.1.norm.total / dg[2];
    out.line(
        8,
        s_lit < -g && ratio_lit >= 2.0,
        format!(
            "C** norm {:?}, slope {s_lit:.3}; unbalanced/balanced at 3.5 = {ratio_lit:.2}",
            lit.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
        ),
        t0,
    );
    out.diag(format!(
        "residual-bound weight: norm {:?}, slope {s_dg:.3} vs -{g}; unbalanced ratio {ratio_dg:.2}; spot-check gap {:.1e} -> {}",
        dg.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>(),
        bal.iter().map(|r| r.1.spot_check_gap()).fold(0.0, f64::max),
        if s_dg < -g && ratio_dg >= 2.0 { "pass" } else { "fail" }
    ));

    let t1 = Instant::now();
    let l = 3.5;
    let q = [1.2, 1.0];
    let a2 = InteractionConstants::closed(p, 1e-11).unwrap().a2;
    let cns = p.c_ns;
    let bracket = |i: usize, a2: f64| q[1 - i] * a2 * d.powf(-2.0 * g) * (d * d).powf(g) - q[i];
    let literal: Vec<f64> = (0..2).map(|i| -cns * q[i] * bracket(i, a2) * (-g * l).exp()).collect();
    let got = unb.2;
    let lit_ok = (0..2).all(|i| within(got[i], literal[i], 0.15));
    let bl: Vec<f64> = bal.iter().map(|r| r.2[0].abs()).collect();
    let s_beta = log_slope(&ls, &bl).unwrap().slope;
    out.line(
        9,
        lit_ok && s_beta < -g,
        format!(
            "unbalanced beta00 {:.4e}/{:.4e} vs bracket {:.4e}/{:.4e}; balanced |beta00| {:?}, slope {s_beta:.3}",
            got[0],
            got[1],
            literal[0],
            literal[1],
            bl.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
        ),
        t1,
    );
    // leading term from pairing the neighbour's far field with the own bubble:
    // c 2^n gamma J e^{-2 gamma L}, J the integral of (1+|x|^2)^{-(n+2 sigma)/2}
    let ex = (p.n as f64 + 2.0 * p.sigma) / 2.0;
    let jint = sphere_area(p.n - 1)
        * integrate_to_inf(|r: f64| r.powi(p.n as i32 - 1) * (1.0 + r * r).powf(-ex), 0.0, 0.0, 1e-12, 4000)
            .unwrap()
            .value;
    let lead = cns * 2f64.powi(p.n as i32) * g * jint * (-2.0 * g * l).exp();
    let derived: Vec<f64> = (0..2).map(|i| -lead * q[i] * bracket(i, 1.0)).collect();
    let gaps: Vec<f64> = (0..2).map(|i| (got[i] - derived[i]).abs() / derived[i].abs()).collect();
    out.diag(format!(
        "e^(-2 gamma L) form with A2_eff = 1: {:.4e}/{:.4e}, rel gaps {:.3}/{:.3} -> {}",
        derived[0],
        derived[1],
        gaps[0],
        gaps[1],
        if gaps.iter().all(|v| *v <= 0.15) { "pass" } else { "fail" }
    ));
}

fn gram(out: &mut Out, p: &ProblemParams) {
    let t0 = Instant::now();
    let cfg = qcurv_core::bubbles::TowerConfig::standard(0, vec![0.0; 5], 1.5, 1.0, 3).unwrap();
    let gm = gram_cokernels(&cfg, p, 1e-9, GramPairing::Printed).unwrap();
    let fit = gm.decay_fit(0, 1.5, false).unwrap();
    out.line(10, within(fit.slope, -p.gamma_s, 0.10), format!("dilation Gram slope {:.4} at J=4, tol 10%", fit.slope), t0);
}

#[test]
fn acceptance() {
    let p = derive_params(5, 1.5).unwrap();
    let ctx = DualContext::new(&p, 1e-11).unwrap();
    let mut out = Out { passed: 0, rows: Vec::new() };
    bubble_fixed_point(&mut out, &p, &ctx);
    kernel_slopes(&mut out, &p);
    neck_law(&mut out, &p);
    constants(&mut out);
    psi_law(&mut out, &p);
    balancing(&mut out, &p);
    toda(&mut out);
    residual_and_beta(&mut out, &p, &ctx);
    gram(&mut out, &p);
    out.rows.sort();
    let _ = writeln!(std::io::stderr(), "acceptance: {}/{} criteria pass", out.passed, out.rows.len());
    assert_eq!(out.rows.len(), 10);
}
