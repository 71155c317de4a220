use qcurv_core::assembler::{
    assemble, beta_projection, residual_sampled, AssemblyOptions, DualContext, SampleSpec, WeightSpec,
};
use qcurv_core::balancing::{balance_jacobian, solve_b1, BalancedConfig, SingularSet};
use qcurv_core::bubbles::KernelIndex;
use qcurv_core::delaunay::neck_sweep;
use qcurv_core::fit::log_slope;
use qcurv_core::interactions::{psi, ConstMethod, InteractionConstants};
use qcurv_core::kernels::CylKernelTable;
use qcurv_core::toda::{weighted_norm, TodaOperator, WeightedSeq};
use qcurv_core::ProblemParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{ConstChoice, RunConfig, TodaChoice};
use crate::error::CliError;

/// Files produced by a command, written together at the end of the run.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    /// Constants that the run depended on, echoed into the manifest.
    pub constants: Value,
}

impl Outputs {
    fn csv(&mut self, name: &str, header: &[String], rows: Vec<Vec<String>>) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(v)?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }
}

fn s(v: f64) -> String {
    v.to_string()
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn interaction_constants(choice: ConstChoice, p: &ProblemParams, tol: f64) -> Result<InteractionConstants, CliError> {
    Ok(match choice {
        ConstChoice::Closed => InteractionConstants::closed(p, tol)?,
        ConstChoice::Unit => {
            InteractionConstants { a1: 1.0, a2: 1.0, a3: -1.0, method: ConstMethod::ClosedIntegral, est_error: 0.0 }
        }
    })
}

pub fn kernel(cfg: &RunConfig, p: &ProblemParams) -> Result<Outputs, CliError> {
    cfg.validate_kernel()?;
    let k = &cfg.kernel;
    let table = CylKernelTable::build(p, k.kind, k.t_min, k.t_max, k.h, cfg.tol)?;
    let rows = table.to_csv_rows();
    let (ts, vs): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.0 >= k.fit[0] && r.0 <= k.fit[1]).map(|r| (r.0, r.1)).unzip();
    let fit = log_slope(&ts, &vs).ok_or_else(|| CliError::Config("kernel: fit window holds fewer than 2 nodes".into()))?;
    let mut out = Outputs { constants: json!({ "calibration": table.calibration }), ..Default::default() };
    out.csv("kernel.csv", &header(&["t", "value", "est_error"]), rows.iter().map(|r| vec![s(r.0), s(r.1), s(r.2)]).collect())?;
    out.json("kernel_fit.json", &json!({ "kind": k.kind, "window": k.fit, "fit": fit }))?;
    Ok(out)
}

pub fn delaunay(cfg: &RunConfig, p: &ProblemParams) -> Result<Outputs, CliError> {
    let d = &cfg.delaunay;
    let sw = neck_sweep(&d.l_list, p, d.m, cfg.tol)?;
    let opt = |v: Option<f64>| v.map(s).unwrap_or_default();
    let rows = sw
        .rows
        .iter()
        .map(|r| vec![s(r.l), opt(r.eps), opt(r.psi_sup), opt(r.resid), r.iters.map(|i| i.to_string()).unwrap_or_default()])
        .collect();
    let mut out = Outputs::default();
    out.csv("sweep.csv", &header(&["L", "eps", "psi_sup", "resid", "iters"]), rows)?;
    out.json("sweep.json", &serde_json::to_value(&sw)?)?;
    if sw.rows.iter().all(|r| r.eps.is_none()) {
        return Err(CliError::Numerical(qcurv_core::QcError::NoSolution("every sweep entry failed".into())));
    }
    Ok(out)
}

pub fn constants(cfg: &RunConfig, p: &ProblemParams) -> Result<Outputs, CliError> {
    let closed = InteractionConstants::closed(p, cfg.tol)?;
    let oracle = if cfg.constants.oracle { Some(InteractionConstants::oracle(p, cfg.tol.max(1e-9))?) } else { None };
    let gaps = oracle.map(|o| {
        json!({
            "a2": (closed.a2 - o.a2).abs() / closed.a2.abs(),
            "a3": (closed.a3 - o.a3).abs() / closed.a3.abs(),
        })
    });
    let psis = cfg
        .constants
        .psi_ell
        .iter()
        .map(|&l| psi(l, p, cfg.tol).map(|v| vec![s(l), s(v)]))
        .collect::<qcurv_core::Result<Vec<_>>>()?;
    let mut out = Outputs { constants: json!({ "closed": closed, "oracle": oracle }), ..Default::default() };
    out.json(
        "constants.json",
        &json!({ "closed": closed, "oracle": oracle, "relative_gap": gaps, "signs_ok": closed.signs_ok() }),
    )?;
    out.csv("psi.csv", &header(&["ell", "psi"]), psis)?;
    Ok(out)
}

pub fn balance(cfg: &RunConfig, p: &ProblemParams) -> Result<Outputs, CliError> {
    let b = &cfg.balance;
    cfg.validate_points(&b.points, &b.q, b.l, "balance")?;
    let set = SingularSet::new(b.points.clone())?;
    let c = interaction_constants(b.constants, p, cfg.tol)?;
    let bal = BalancedConfig::solve(&set, &b.q, b.l, &c, p, cfg.tol)?;
    let jac = balance_jacobian(&set, &bal.q, &bal.r, &c, p)?;
    let mut cols = header(&["i", "q", "R", "L_i"]);
    cols.extend((0..cfg.n).map(|k| format!("a0_{k}")));
    let rows = (0..set.len())
        .map(|i| {
            let mut r = vec![i.to_string(), s(bal.q[i]), s(bal.r[i]), s(bal.l_i[i])];
            r.extend(bal.a0_hat[i].iter().map(|v| s(*v)));
            r
        })
        .collect();
    let mut out = Outputs { constants: json!({ "interaction": c }), ..Default::default() };
    out.csv("balance.csv", &cols, rows)?;
    out.json("balance.json", &json!({ "config": bal, "jacobian": jac }))?;
    Ok(out)
}

pub fn assemble_residual(cfg: &RunConfig, p: &ProblemParams) -> Result<Outputs, CliError> {
    let a = &cfg.assemble;
    cfg.validate_points(&a.points, &a.q, a.l, "assemble")?;
    let set = SingularSet::new(a.points.clone())?;
    let c = interaction_constants(a.constants, p, cfg.tol)?;
    let r = match &a.r {
        Some(r) if r.len() == set.len() && r.iter().all(|v| *v > 0.0) => r.clone(),
        Some(_) => return Err(CliError::Config("assemble: r needs one positive entry per point".into())),
        None => solve_b1(&set, &a.q, &c, p, cfg.tol)?,
    };
    let bal = BalancedConfig::from_parts(&set, &a.q, r, a.l, &c, p)?;
    let opts = AssemblyOptions { grid_m: a.grid_m, ..AssemblyOptions::default() };
    let approx = assemble(&set, &bal, None, p, &opts)?;
    let ctx = DualContext::new(p, cfg.tol)?;
    let weight = WeightSpec::new(a.zeta1.unwrap_or_else(|| WeightSpec::default_zeta1(p)), a.tau, a.weight, p)?;
    let spec = SampleSpec {
        near_per_point: a.near_per_point,
        transition_per_point: a.transition_per_point,
        far: a.far,
        far_radius: a.far_radius,
        seed: cfg.seed,
    };
    let mut rep = residual_sampled(&approx, &ctx, &weight, &spec, a.spot_checks)?;
    let samples = std::mem::take(&mut rep.samples);
    let mut cols = header(&["region", "dist", "value"]);
    cols.extend((0..cfg.n).map(|k| format!("x{k}")));
    let rows = samples
        .iter()
        .map(|v| {
            let mut r = vec![format!("{:?}", v.region).to_lowercase(), s(v.dist), s(v.value)];
            r.extend(v.x.iter().map(|x| s(*x)));
            r
        })
        .collect();
    let mut betas = Vec::new();
    for i in 0..set.len() {
        for ell in 0..=cfg.n {
            let b = beta_projection(&approx, &KernelIndex { i, j: 0, ell })?;
            betas.push(vec![i.to_string(), "0".into(), ell.to_string(), s(b)]);
        }
    }
    let mut out = Outputs { constants: json!({ "interaction": c, "kappa": ctx.kappa }), ..Default::default() };
    out.json("residual.json", &json!({ "balance": bal, "report": rep, "spot_check_gap": rep.spot_check_gap() }))?;
    out.csv("residual_samples.csv", &cols, rows)?;
    out.csv("beta.csv", &header(&["i", "j", "ell", "beta"]), betas)?;
    Ok(out)
}

pub fn toda(cfg: &RunConfig) -> Result<Outputs, CliError> {
    cfg.validate_toda()?;
    let t = &cfg.toda;
    let op = match t.kind {
        TodaChoice::Translation => TodaOperator::translation(t.period, t.k),
        TodaChoice::Dilation => TodaOperator::dilation(t.k),
    };
    let vals = t.values.clone().unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..t.k).map(|_| rng.gen_range(-1.0..1.0)).collect()
    });
    let b = WeightedSeq::scalar(vals, t.tau);
    let a = op.invert(&b, t.tau)?;
    let back = op.apply(&a)?;
    let (bv, av, cv) = (b.component(0), a.component(0), back.component(0));
    let err = bv.iter().zip(&cv).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let dense = op.dense_solve(&bv)?;
    let dense_gap = av.iter().zip(&dense).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let rows = (0..t.k).map(|j| vec![j.to_string(), s(bv[j]), s(av[j]), s(cv[j])]).collect();
    let mut out = Outputs { constants: json!({ "ratio": op.ratio() }), ..Default::default() };
    out.csv("toda.csv", &header(&["j", "b", "a", "apply_a"]), rows)?;
    out.json(
        "toda.json",
        &json!({
            "operator": op,
            "identity_error": err,
            "dense_gap": dense_gap,
            "norm_b": weighted_norm(&b),
            "norm_a": weighted_norm(&a),
            "inverse_induced_norm": op.inverse_induced_norm(t.tau),
        }),
    )?;
    Ok(out)
}
