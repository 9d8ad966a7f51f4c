//! One function per subcommand. Each writes its artifacts into the output
//! directory and returns the JSON result block of the report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use hsphere::diagnose::{diagnose, PohozaevRow};
use hsphere::energy::{alpha_energy, dirichlet};
use hsphere::solve::{
    alpha_continuation, descend, lambda_scan, minmax_width, refine_critical, SolveReport, StageReport, Termination,
    TraceRow,
};
use hsphere::spectrum::{b_omega_index, energy_bound_check, morse_index, SpectrumOptions};
use hsphere::{DomainMesh, MapState, Problem};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ContinuationStart, RunConfig, ScanFamily, Setup};
use crate::Failure;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub setup: &'a Setup,
    pub out: &'a Path,
}

impl Ctx<'_> {
    fn problem(&self) -> Result<Problem<'_>, Failure> {
        let s = self.setup;
        Problem::new(&s.mesh, &s.target, &s.form, s.params).map_err(Failure::config)
    }

    fn init(&self) -> Result<MapState, Failure> {
        self.cfg.initial_state(self.setup).map_err(|e| match e.downcast_ref::<hsphere::Error>() {
            Some(hsphere::Error::FormatError(_) | hsphere::Error::MeshMismatch(_)) => Failure::Io(e),
            Some(hsphere::Error::Io(_)) => Failure::Io(e),
            _ => Failure::Config(e),
        })
    }

    fn spectrum_opts(&self) -> SpectrumOptions {
        SpectrumOptions { seed: self.cfg.seed, ..self.cfg.spectrum }
    }

    fn save_state(&self, name: &str, mesh: &DomainMesh, u: &MapState) -> Result<(), Failure> {
        hsphere::io::save_state(self.out.join(name), mesh, u).map_err(Failure::io)
    }

    fn write(&self, name: &str, text: &str) -> Result<(), Failure> {
        let p = self.out.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display())).map_err(Failure::Io)
    }
}

#[derive(Serialize)]
struct SolveSummary {
    iterations: usize,
    grad_norm: f64,
    energy: f64,
    converged: bool,
    termination: Termination,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            iterations: r.iterations,
            grad_norm: r.grad_norm,
            energy: r.energy,
            converged: r.converged,
            termination: r.termination,
        }
    }
}

fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("iter,energy,grad_norm,step\n");
    for r in rows {
        let _ = writeln!(s, "{:?},{:?},{:?},{:?}", r.iter, r.energy, r.grad_norm, r.step);
    }
    s
}

fn energies(pb: &Problem, u: &MapState) -> Value {
    json!({
        "total": pb.energy(u),
        "alpha_energy": pb.alpha_energy(u),
        "dirichlet": dirichlet(pb.mesh, u),
    })
}

pub fn solve(c: &Ctx) -> Result<(Value, Option<Failure>), Failure> {
    let pb = c.problem()?;
    let u0 = c.init()?;
    let rep = descend(&pb, &u0, &c.cfg.descent).map_err(Failure::solver)?;
    let mut trace = rep.trace.clone();
    let mut summary = json!({ "descent": SolveSummary::from(&rep) });
    let mut final_rep = rep;
    if c.cfg.solve.refine && final_rep.converged {
        let nr = refine_critical(&pb, &final_rep.state, &c.cfg.newton).map_err(Failure::solver)?;
        summary["newton"] = serde_json::to_value(SolveSummary::from(&nr)).expect("serializable");
        let offset = trace.last().map_or(0, |r| r.iter + 1);
        trace.extend(nr.trace.iter().map(|r| TraceRow { iter: r.iter + offset, ..*r }));
        final_rep = nr;
    }
    c.save_state("state.txt", pb.mesh, &final_rep.state)?;
    c.write("trace.csv", &trace_csv(&trace))?;
    summary["converged"] = json!(final_rep.converged);
    summary["energies"] = energies(&pb, &final_rep.state);
    let fail = (!final_rep.converged).then(|| {
        Failure::Solver(anyhow!("solver stopped with {:?} at gradient norm {:.3e}", final_rep.termination, final_rep.grad_norm))
    });
    Ok((summary, fail))
}

pub fn minmax(c: &Ctx) -> Result<(Value, Option<Failure>), Failure> {
    let pb = c.problem()?;
    let sweep = c.cfg.sweepout(c.setup).map_err(Failure::config)?;
    let rep = minmax_width(&pb, &sweep, &c.cfg.minmax.options).map_err(Failure::solver)?;
    c.save_state("critical.txt", pb.mesh, &rep.critical)?;
    let mut rounds = String::from("round,width,argmax,grad_norm_at_max\n");
    for r in &rep.rounds {
        let _ = writeln!(rounds, "{:?},{:?},{:?},{:?}", r.round, r.width, r.argmax, r.grad_norm_at_max);
    }
    c.write("rounds.csv", &rounds)?;
    let mut v = json!({
        "width": rep.width,
        "argmax": rep.argmax,
        "argmax_param": rep.sweepout.params()[rep.argmax],
        "critical_energy": rep.critical_energy,
        "critical_grad_norm": rep.critical_grad_norm,
        "refined": rep.refined,
        "budget_exhausted": rep.budget_exhausted,
        "rounds": rep.rounds,
        "energies": energies(&pb, &rep.critical),
    });
    if c.cfg.minmax.index {
        let sp = morse_index(&pb, &rep.critical, &c.spectrum_opts()).map_err(Failure::solver)?;
        v["spectrum"] = serde_json::to_value(sp).expect("serializable");
    }
    let fail = (rep.budget_exhausted && !rep.refined)
        .then(|| Failure::Solver(anyhow!("min-max budget exhausted at gradient norm {:.3e}", rep.critical_grad_norm)));
    Ok((v, fail))
}

#[derive(Serialize)]
struct StageSummary {
    alpha: f64,
    solve: SolveSummary,
    alpha_energy: f64,
    dirichlet: f64,
    density_ratio: f64,
    c0_change: Option<f64>,
    bubbles: usize,
}

impl From<&StageReport> for StageSummary {
    fn from(s: &StageReport) -> Self {
        Self {
            alpha: s.alpha,
            solve: SolveSummary::from(&s.solve),
            alpha_energy: s.alpha_energy,
            dirichlet: s.dirichlet,
            density_ratio: s.density_ratio,
            c0_change: s.c0_change,
            bubbles: s.bubbles.len(),
        }
    }
}

pub fn continuation(c: &Ctx) -> Result<(Value, Option<Failure>), Failure> {
    let pb = c.problem()?;
    let schedule = c.cfg.schedule();
    let mut out = json!({});
    let (u0, rest) = match c.cfg.continuation.start {
        ContinuationStart::Init => (c.init()?, &schedule[..]),
        ContinuationStart::Minmax => {
            if schedule.len() < 2 {
                return Err(Failure::Config(anyhow!("a min-max start needs at least two schedule values")));
            }
            let p0 = pb.with_params(pb.params.with_alpha(schedule[0]));
            let sweep = c.cfg.sweepout(c.setup).map_err(Failure::config)?;
            let rep = minmax_width(&p0, &sweep, &c.cfg.minmax.options).map_err(Failure::solver)?;
            out["minmax"] = json!({
                "alpha": schedule[0],
                "width": rep.width,
                "argmax": rep.argmax,
                "critical_grad_norm": rep.critical_grad_norm,
                "refined": rep.refined,
            });
            c.save_state("critical.txt", pb.mesh, &rep.critical)?;
            (rep.critical, &schedule[1..])
        }
    };
    let rep = alpha_continuation(&pb, &u0, rest, &c.cfg.continuation.options).map_err(Failure::solver)?;
    let mut csv = String::from("alpha,iterations,grad_norm,converged,alpha_energy,dirichlet,density_ratio,c0_change,bubbles\n");
    for s in &rep.stages {
        let _ = writeln!(
            csv,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{:?}",
            s.alpha,
            s.solve.iterations,
            s.solve.grad_norm,
            s.solve.converged,
            s.alpha_energy,
            s.dirichlet,
            s.density_ratio,
            s.c0_change.map_or(String::new(), |x| format!("{x:?}")),
            s.bubbles.len()
        );
    }
    c.write("stages.csv", &csv)?;
    let last = rep.last().ok_or_else(|| Failure::Solver(anyhow!("empty continuation")))?;
    c.save_state("state.txt", pb.mesh, &last.solve.state)?;
    let bubbles: Vec<_> = rep.bubbles().collect();
    if !bubbles.is_empty() {
        let bm = DomainMesh::icosphere(c.cfg.continuation.options.bubble_subdivisions).map_err(Failure::config)?;
        for (i, b) in bubbles.iter().enumerate() {
            c.save_state(&format!("bubble_{i}.txt"), &bm, &b.bubble)?;
        }
    }
    out["stages"] = serde_json::to_value(rep.stages.iter().map(StageSummary::from).collect::<Vec<_>>()).expect("serializable");
    out["bubbles"] = serde_json::to_value(&bubbles).expect("serializable");
    out["concentration_events"] = json!(bubbles.len());
    out["area"] = json!(rep.area);
    out["energy_identity_defect"] = json!(hsphere::diagnose::energy_identity_defect(&rep).map_err(Failure::solver)?);
    out["final_alpha_energy"] = json!(last.alpha_energy);
    let fail = rep
        .stages
        .iter()
        .find(|s| !s.solve.converged)
        .map(|s| Failure::Solver(anyhow!("stage alpha = {} did not converge", s.alpha)));
    Ok((out, fail))
}

pub fn index(c: &Ctx) -> Result<(Value, Option<Failure>), Failure> {
    let pb = c.problem()?;
    let u = c.init()?;
    let sp = morse_index(&pb, &u, &c.spectrum_opts()).map_err(Failure::solver)?;
    let e = dirichlet(pb.mesh, &u);
    let bound = c.cfg.diagnose.c0.and_then(|c0| energy_bound_check(e, sp.morse_index, c0));
    Ok((
        json!({
            "grad_norm": pb.grad_norm(&pb.gradient(&u)),
            "energies": energies(&pb, &u),
            "spectrum": sp,
            "energy_bound_ok": bound,
        }),
        None,
    ))
}

pub fn bomega(c: &Ctx) -> Result<(Value, Option<Failure>), Failure> {
    let pb = c.problem()?;
    let u = c.init()?;
    let s = c.setup;
    let form = s.form.scaled(pb.params.omega_weight());
    let opts = hsphere::spectrum::BOmegaOptions { spectrum: c.spectrum_opts(), ..c.cfg.bomega };
    let b = b_omega_index(&s.mesh, &s.target, &form, &u, &opts).map_err(Failure::solver)?;
    let m = morse_index(&pb, &u, &c.spectrum_opts()).map_err(Failure::solver)?;
    let ok = b.index <= m.morse_index;
    let v = json!({
        "grad_norm": pb.grad_norm(&pb.gradient(&u)),
        "b_omega": b,
        "morse": m,
        "b_omega_le_morse": ok,
    });
    Ok((v, None))
}

pub fn diagnose_cmd(c: &Ctx) -> Result<(Value, Option<Failure>), Failure> {
    let pb = c.problem()?;
    let u = c.init()?;
    let d = &c.cfg.diagnose;
    let n = (d.center.iter().map(|x| x * x).sum::<f64>()).sqrt();
    if !(n > 0.0) {
        return Err(Failure::Config(anyhow!("diagnose.center must be non-zero")));
    }
    let center = pb.mesh.nearest_vertex([d.center[0] / n, d.center[1] / n, d.center[2] / n]);
    let rep = diagnose(&pb, &u, center, &d.radii, None).map_err(|e| match e {
        hsphere::Error::RadiusOutOfChart(_) => Failure::config(e),
        e => Failure::solver(e),
    })?;
    c.write("pohozaev.csv", &pohozaev_csv(&rep.pohozaev))?;
    let ea = alpha_energy(pb.mesh, &u, &pb.params);
    let e = dirichlet(pb.mesh, &u);
    let half_area = 0.5 * pb.mesh.total_area();
    let v = json!({
        "center_vertex": center,
        "el_residual": rep.el_residual,
        "conformality": { "hopf": rep.conformality.0, "shear": rep.conformality.1 },
        "pohozaev": rep.pohozaev,
        "balancing": { "vector": rep.balancing, "relative": rep.balancing_relative },
        "energy_identity": {
            "alpha_energy": ea,
            "dirichlet": e,
            "half_area": half_area,
            "bubbles": 0,
            "defect": ea - (e + half_area),
        },
    });
    Ok((v, None))
}

fn pohozaev_csv(rows: &[PohozaevRow]) -> String {
    let mut s = String::from("radius,chart_radius,boundary,bulk,residual,weighted_residual\n");
    for r in rows {
        let _ = writeln!(s, "{:?},{:?},{:?},{:?},{:?},{:?}", r.radius, r.chart_radius, r.boundary, r.bulk, r.residual, r.weighted_residual);
    }
    s
}

pub fn scan_lambda(c: &Ctx) -> Result<(Value, Option<Failure>), Failure> {
    let s = c.setup;
    let family = match c.cfg.scan.family {
        ScanFamily::Latitude => c.cfg.sweepout(s).map_err(Failure::config)?.states().to_vec(),
        ScanFamily::Init => vec![c.init()?],
    };
    let rows = lambda_scan(&s.mesh, &s.target, &s.form, &family, &c.cfg.scan.alphas, &c.cfg.scan.lambdas, s.params.tau)
        .map_err(|e| match e {
            hsphere::Error::InvalidParameter(_) | hsphere::Error::DimensionMismatch(_) => Failure::config(e),
            e => Failure::solver(e),
        })?;
    let mut csv = String::from("alpha,lambda,width,ratio,argmax\n");
    for r in &rows {
        let _ = writeln!(csv, "{:?},{:?},{:?},{:?},{:?}", r.alpha, r.lambda, r.width, r.ratio, r.argmax);
    }
    c.write("scan.csv", &csv)?;
    let monotone: Vec<Value> = c
        .cfg
        .scan
        .alphas
        .iter()
        .map(|&a| {
            let r: Vec<f64> = rows.iter().filter(|r| r.alpha == a).map(|r| r.ratio).collect();
            json!({ "alpha": a, "ratio_non_increasing": r.windows(2).all(|w| w[1] <= w[0]) })
        })
        .collect();
    Ok((json!({ "family_size": family.len(), "rows": rows, "monotone": monotone }), None))
}

pub fn mesh_export(c: &Ctx) -> Result<(Value, Option<Failure>), Failure> {
    let s = c.setup;
    let u = c.init()?;
    let io = |r: hsphere::Result<()>| r.map_err(Failure::io);
    io(hsphere::io::export_obj(c.out.join("mesh.obj"), &s.mesh, None))?;
    io(hsphere::io::export_obj(c.out.join("image.obj"), &s.mesh, Some(&u)))?;
    c.save_state("state.txt", &s.mesh, &u)?;
    Ok((
        json!({
            "vertices": s.mesh.num_vertices(),
            "triangles": s.mesh.num_triangles(),
            "area": s.mesh.total_area(),
            "mesh_size": s.mesh.mesh_size(),
        }),
        None,
    ))
}
